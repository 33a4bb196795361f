"""Pure numpy fallback for the compiled stencil kernels."""
import numpy as np


def apply_stencil(field, nbr, mats):
    field = np.asarray(field, dtype=np.float64)
    mats = np.asarray(mats, dtype=np.float64)
    if mats.shape[0] != nbr.shape[0] or mats.shape[2] != field.shape[2]:
        raise ValueError("stencil matrices do not match field components")
    if nbr.shape[1] != field.shape[1]:
        raise ValueError("neighbour table does not match field sites")
    out = np.zeros(field.shape[:2] + (mats.shape[1],))
    for s in range(nbr.shape[0]):
        out += field[:, nbr[s], :] @ mats[s].T
    return out


def verlet(u0, v0, nbr, mats, dt, nsteps):
    u = np.array(u0, dtype=np.float64)
    v = np.array(v0, dtype=np.float64)
    mats = np.asarray(mats, dtype=np.float64)

    def force(x):
        return -apply_stencil(x[None], nbr, mats)[0]

    f = force(u)
    for _ in range(int(nsteps)):
        v += 0.5 * dt * f
        u += dt * v
        f = force(u)
        v += 0.5 * dt * f
    return u, v
