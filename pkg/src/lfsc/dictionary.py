"""Perspective-shifted light field dictionary.

2D atoms live on an extended ``m x m`` canvas.  A light field atom for unit
disparity ``dp`` is built by sampling each atom at the window displaced by
``dp * (H(v), V(v))`` for every view ``v`` of an 8x8 region, vectorising the
64 crops and concatenating them.  Columns sharing a ``dp`` form one segment.
"""

from __future__ import annotations

import hashlib
import math
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

LFD_MAGIC = b"LFD1"
REGION_DIM = 8
PATCH_SIZE = 8
DEFAULT_LEVELS = tuple(round(-3.0 + 0.3 * i, 1) for i in range(21))
DEFAULT_KC = 400


class DictionaryError(ValueError):
    pass


def canonical_levels(levels) -> np.ndarray:
    """Disparity levels as float64 values exactly representable in float32."""
    arr = np.asarray(levels, dtype=np.float32).astype(np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DictionaryError("disparity grid must be a non-empty 1D sequence")
    if np.any(np.diff(arr) <= 0):
        raise DictionaryError("disparity grid must be strictly ascending")
    return arr


def lattice_offsets(rows: int = REGION_DIM, cols: int = REGION_DIM) -> tuple[np.ndarray, np.ndarray]:
    """Relative view positions ``(H, V)`` of a region, measured from its centre.

    ``H`` is constant along each row and steps with the row index; ``V`` is
    constant along each column.  For 8x8 both run -3.5 .. 3.5.
    """
    if (rows, cols) != (REGION_DIM, REGION_DIM):
        raise DictionaryError(f"only {REGION_DIM}x{REGION_DIM} regions are supported, got {rows}x{cols}")
    r = np.arange(rows, dtype=np.float64) - (rows - 1) / 2.0
    c = np.arange(cols, dtype=np.float64) - (cols - 1) / 2.0
    H = np.repeat(r[:, None], cols, axis=1)
    V = np.repeat(c[None, :], rows, axis=0)
    return H, V


def shear_vector(dp: float, view: tuple[int, int], lattice=None) -> tuple[float, float]:
    """Displacement ``(dx, dy) = dp * (H(v), V(v))`` of 0-based region view ``v``."""
    H, V = lattice if lattice is not None else lattice_offsets()
    i, j = view
    return float(dp * H[i, j]), float(dp * V[i, j])


def canvas_size(max_dp: float = 3.0, max_offset: float = 3.5, patch_size: int = PATCH_SIZE) -> int:
    return patch_size + 2 * math.ceil(abs(max_dp) * abs(max_offset))


def central_crop(atom: np.ndarray, patch_size: int = PATCH_SIZE) -> np.ndarray:
    m = atom.shape[-1]
    c0 = (m - patch_size) // 2
    return atom[..., c0:c0 + patch_size, c0:c0 + patch_size]


def warp_crop(atom: np.ndarray, shift: tuple[float, float], patch_size: int = PATCH_SIZE) -> np.ndarray:
    """Bilinear sample of the ``patch_size`` window displaced by ``shift``.

    ``shift = (dx, dy)`` moves the sampling window by ``dx`` columns and
    ``dy`` rows: ``out[y, x] = atom(c0 + y + dy, c0 + x + dx)``.  Accepts a
    single canvas ``(m, m)`` or a stack ``(k, m, m)``.
    """
    atom = np.asarray(atom, dtype=np.float64)
    m = atom.shape[-1]
    margin = (m - patch_size) / 2.0
    dx, dy = float(shift[0]), float(shift[1])
    if abs(dx) > margin or abs(dy) > margin:
        raise DictionaryError(f"shift ({dx}, {dy}) exceeds canvas margin {margin}")
    c0 = (m - patch_size) // 2
    fx, fy = math.floor(dx), math.floor(dy)
    ax, ay = dx - fx, dy - fy
    x0, y0 = c0 + fx, c0 + fy
    # one zero row/column past the canvas keeps the +1 taps in range at the margin
    pad = [(0, 0)] * (atom.ndim - 2) + [(0, 1), (0, 1)]
    a = np.pad(atom, pad)
    p = patch_size
    top = (1.0 - ax) * a[..., y0:y0 + p, x0:x0 + p] + ax * a[..., y0:y0 + p, x0 + 1:x0 + 1 + p]
    bot = (1.0 - ax) * a[..., y0 + 1:y0 + 1 + p, x0:x0 + p] + ax * a[..., y0 + 1:y0 + 1 + p, x0 + 1:x0 + 1 + p]
    return (1.0 - ay) * top + ay * bot


def _synthesize(atoms: np.ndarray, dp: float, lattice, patch_size: int) -> np.ndarray:
    """Rows are light field atoms, shape ``(k, n_views * p * p)``, unit norm."""
    H, V = lattice
    k = atoms.shape[0]
    rows, cols = H.shape
    p2 = patch_size * patch_size
    out = np.empty((k, rows * cols * p2))
    for i in range(rows):
        for j in range(cols):
            slot = i * cols + j
            crop = warp_crop(atoms, (dp * H[i, j], dp * V[i, j]), patch_size)
            out[:, slot * p2:(slot + 1) * p2] = crop.reshape(k, p2)
    norms = np.sqrt(np.einsum("ij,ij->i", out, out))
    norms[norms == 0] = 1.0
    return out / norms[:, None]


def synthesize_lf_atom(atom: np.ndarray, dp: float, lattice=None,
                       patch_size: int = PATCH_SIZE) -> np.ndarray:
    """Light field atom (unit norm) for one 2D canvas at unit disparity ``dp``."""
    lattice = lattice if lattice is not None else lattice_offsets()
    return _synthesize(np.asarray(atom, dtype=np.float64)[None], dp, lattice, patch_size)[0]


def _normalize_crops(atoms: np.ndarray, patch_size: int) -> np.ndarray:
    crops = central_crop(atoms, patch_size).reshape(atoms.shape[0], -1)
    norms = np.sqrt(np.einsum("ij,ij->i", crops, crops))
    if np.any(norms < 1e-12):
        raise DictionaryError("atom with zero energy in its central crop")
    return atoms / norms[:, None, None]


def content_hash(atoms_f32: np.ndarray, levels: np.ndarray, patch_size: int) -> int:
    """64-bit digest over a canonical, 1e-6-quantised serialisation."""
    h = hashlib.blake2b(digest_size=8)
    k, m, _ = atoms_f32.shape
    h.update(LFD_MAGIC + struct.pack("<HHBH", k, m, patch_size, len(levels)))
    q_levels = np.rint(np.asarray(levels, dtype=np.float64) * 1e6).astype("<i8")
    q_atoms = np.rint(np.asarray(atoms_f32, dtype=np.float64) * 1e6).astype("<i8")
    h.update(q_levels.tobytes())
    h.update(q_atoms.tobytes())
    return int.from_bytes(h.digest(), "little")


@dataclass(eq=False)
class LfDictionary:
    """2D atom bank plus lazily synthesised disparity segments.

    Atoms are canonicalised through float32 (the on-disk precision) and then
    renormalised so the central crop has unit norm; a dictionary built in
    memory and one loaded from its ``.lfd`` file are therefore identical.
    """

    atoms_f32: np.ndarray
    levels: np.ndarray
    patch_size: int = PATCH_SIZE
    atoms: np.ndarray = field(init=False, repr=False)
    lattice: tuple = field(init=False, repr=False)
    content_hash: int = field(init=False)

    def __post_init__(self):
        self.atoms_f32 = np.ascontiguousarray(self.atoms_f32, dtype=np.float32)
        if self.atoms_f32.ndim != 3 or self.atoms_f32.shape[1] != self.atoms_f32.shape[2]:
            raise DictionaryError("atoms must have shape (k, m, m)")
        if not np.all(np.isfinite(self.atoms_f32)):
            raise DictionaryError("atoms contain non-finite values")
        self.levels = canonical_levels(self.levels)
        m = self.canvas
        if m < self.patch_size:
            raise DictionaryError("canvas smaller than patch")
        self.atoms = _normalize_crops(self.atoms_f32.astype(np.float64), self.patch_size)
        self.lattice = lattice_offsets()
        self.content_hash = content_hash(self.atoms_f32, self.levels, self.patch_size)
        self._segments: dict[float, np.ndarray] = {}
        self._restricted: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def canvas(self) -> int:
        return self.atoms_f32.shape[1]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def n_views(self) -> int:
        return REGION_DIM * REGION_DIM

    @property
    def logical_shape(self) -> tuple[int, int]:
        """Shape of the full concatenated dictionary ``[D_1, ..., D_sn]``."""
        return self.n_views * self.patch_size ** 2, self.n_atoms * self.n_levels

    def segment_rows(self, dp: float) -> np.ndarray:
        """Segment for disparity ``dp`` stored atom-major, shape ``(k, 4096)``.

        Any ``dp`` within the canvas margin is accepted; grid levels and the
        halved chroma disparities are the ones the coder asks for.
        """
        key = float(dp)
        seg = self._segments.get(key)
        if seg is None:
            with self._lock:
                seg = self._segments.get(key)
                if seg is None:
                    seg = _synthesize(self.atoms, key, self.lattice, self.patch_size)
                    seg.setflags(write=False)
                    self._segments[key] = seg
        return seg

    def segment(self, level: int) -> np.ndarray:
        """Column-major view ``D_dp`` of shape ``(4096, k)`` for a grid level index."""
        return self.segment_rows(self.levels[level]).T

    def full_matrix(self) -> np.ndarray:
        return np.hstack([self.segment(i) for i in range(self.n_levels)])

    def restricted(self, dp: float, slots: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        """Segment rows for the given view slots, columns renormalised.

        Returns ``(Dn, scale)`` with ``Dn`` of shape ``(len(slots) * p * p, k)``
        having unit-norm columns and ``scale`` the pre-normalisation norms.
        """
        key = (float(dp), tuple(slots))
        hit = self._restricted.get(key)
        if hit is not None:
            return hit
        seg = self.segment_rows(dp)
        p2 = self.patch_size ** 2
        idx = np.concatenate([np.arange(s * p2, (s + 1) * p2) for s in slots])
        sub = np.ascontiguousarray(seg[:, idx])
        scale = np.sqrt(np.einsum("ij,ij->i", sub, sub))
        safe = np.where(scale > 0, scale, 1.0)
        dn = np.ascontiguousarray((sub / safe[:, None]).T)
        dn.setflags(write=False)
        with self._lock:
            self._restricted.setdefault(key, (dn, scale))
        return self._restricted[key]

    def clear_cache(self) -> None:
        with self._lock:
            self._segments.clear()
            self._restricted.clear()

    # -- serialisation -----------------------------------------------------

    def to_bytes(self) -> bytes:
        k, m, _ = self.atoms_f32.shape
        out = [LFD_MAGIC, struct.pack("<HHBH", k, m, self.patch_size, self.n_levels)]
        out.append(self.levels.astype("<f4").tobytes())
        out.append(self.atoms_f32.astype("<f4").tobytes())
        out.append(struct.pack("<Q", self.content_hash))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LfDictionary":
        if data[:4] != LFD_MAGIC:
            raise DictionaryError("not a dictionary file (bad magic)")
        try:
            k, m, p, sn = struct.unpack_from("<HHBH", data, 4)
            pos = 4 + struct.calcsize("<HHBH")
            levels = np.frombuffer(data, dtype="<f4", count=sn, offset=pos)
            pos += 4 * sn
            atoms = np.frombuffer(data, dtype="<f4", count=k * m * m, offset=pos).reshape(k, m, m)
            pos += 4 * k * m * m
            (stored,) = struct.unpack_from("<Q", data, pos)
        except (struct.error, ValueError) as exc:
            raise DictionaryError(f"truncated dictionary file: {exc}") from exc
        if pos + 8 != len(data):
            raise DictionaryError("trailing bytes in dictionary file")
        d = cls(atoms.copy(), levels.astype(np.float64), p)
        if d.content_hash != stored:
            raise DictionaryError("dictionary content hash does not match its payload")
        return d

    def save(self, path: str) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path: str) -> "LfDictionary":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def build_dictionary(atoms: np.ndarray, levels=DEFAULT_LEVELS,
                     patch_size: int = PATCH_SIZE) -> LfDictionary:
    return LfDictionary(np.asarray(atoms), np.asarray(levels, dtype=np.float64), patch_size)


def dct_fallback_atoms(k_c: int = DEFAULT_KC, canvas: int | None = None,
                       patch_size: int = PATCH_SIZE) -> np.ndarray:
    """Overcomplete separable cosine atoms on the extended canvas.

    ``sqrt(k_c)`` frequencies per axis, phased as a DCT-II over the whole
    canvas so the central crop sees neither a symmetry axis nor a seam; the
    cosines continue analytically into the margins.  Non-constant atoms have
    their crop mean removed.
    """
    n = math.isqrt(k_c)
    if n * n != k_c:
        raise DictionaryError("k_c must be a perfect square for the cosine fallback")
    m = canvas if canvas is not None else canvas_size(patch_size=patch_size)
    c0 = (m - patch_size) // 2
    u = np.arange(m, dtype=np.float64) + 0.5
    inside = slice(c0, c0 + patch_size)
    basis = np.empty((n, m))
    for k in range(n):
        a = np.cos(np.pi * k * u / m)
        if k > 0:
            a = a - a[inside].mean()
        basis[k] = a
    atoms = np.einsum("im,jn->ijmn", basis, basis).reshape(k_c, m, m)
    return _normalize_crops(atoms, patch_size)


def default_dictionary(levels=DEFAULT_LEVELS) -> LfDictionary:
    return build_dictionary(dct_fallback_atoms(), levels)


# ---------------------------------------------------------------------------
# K-SVD
# ---------------------------------------------------------------------------


@dataclass
class KsvdResult:
    atoms: np.ndarray
    objective: list


def batch_omp(D: np.ndarray, X: np.ndarray, sparsity: int, chunk: int = 1024) -> np.ndarray:
    """Fixed-sparsity OMP for many signals at once (Gram-matrix form).

    ``D`` is ``(d, k)`` with unit columns, ``X`` is ``(d, n)``; returns dense
    codes ``(k, n)``.
    """
    d, k = D.shape
    n = X.shape[1]
    T = min(sparsity, k, d)
    G = D.T @ D
    A = np.zeros((k, n))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        a0 = D.T @ X[:, lo:hi]
        b = hi - lo
        cols = np.arange(b)
        support = np.zeros((b, 0), dtype=np.int64)
        coef = np.zeros((b, 0))
        for t in range(T):
            if t == 0:
                corr = a0.copy()
            else:
                # D^T r = D^T x - G[:, S] x_S, per signal
                corr = a0 - np.einsum("kbt,bt->kb", G[:, support], coef)
                corr[support.T, cols[None, :]] = 0.0
            j = np.argmax(np.abs(corr), axis=0)
            support = np.concatenate([support, j[:, None]], axis=1)
            gss = G[support[:, :, None], support[:, None, :]]
            gss = gss + 1e-10 * np.eye(t + 1)[None]
            rhs = a0[support.T, cols[None, :]].T
            coef = np.linalg.solve(gss, rhs[..., None])[..., 0]
        np.add.at(A, (support.T, np.broadcast_to(cols + lo, support.T.shape)), coef.T)
    return A


def _leading_left_vector(E: np.ndarray) -> np.ndarray | None:
    """Top left singular vector of ``E`` via the smaller Gram matrix."""
    d, n = E.shape
    if n <= d:
        w, V = np.linalg.eigh(E.T @ E)
        if w[-1] <= 1e-12:
            return None
        u = E @ V[:, -1]
        return u / np.linalg.norm(u)
    w, U = np.linalg.eigh(E @ E.T)
    if w[-1] <= 1e-12:
        return None
    return U[:, -1]


def train_ksvd(patches: np.ndarray, k_c: int = DEFAULT_KC, sparsity: int = 8,
               iterations: int = 10, seed: int = 0) -> KsvdResult:
    """Learn ``k_c`` unit-norm atoms with K-SVD.

    ``patches`` is ``(n, m, m)`` (or ``(n, d)``).  Atoms start as a seeded
    random subset of the patches; unused atoms are replaced by the currently
    worst-represented patch.  A signal keeps its previous code when fresh
    OMP does worse, which makes the objective non-increasing.
    """
    patches = np.asarray(patches, dtype=np.float64)
    shape = patches.shape[1:]
    X = patches.reshape(patches.shape[0], -1).T.copy()
    d, n = X.shape
    if n < k_c:
        raise DictionaryError(f"need at least {k_c} training patches, got {n}")
    energy = np.einsum("ij,ij->j", X, X)
    nonzero = np.flatnonzero(energy > 1e-12)
    if nonzero.size < k_c:
        raise DictionaryError("degenerate training set: too few non-zero patches")

    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(nonzero, size=k_c, replace=False))
    D = X[:, pick] / np.sqrt(energy[pick])[None, :]
    A = np.zeros((k_c, n))
    R = X.copy()
    err = energy.copy()
    objective = []

    for _ in range(iterations):
        A_new = batch_omp(D, X, sparsity)
        R_new = X - D @ A_new
        err_new = np.einsum("ij,ij->j", R_new, R_new)
        better = err_new < err
        A[:, better] = A_new[:, better]
        R[:, better] = R_new[:, better]
        err[better] = err_new[better]

        replaced = set()
        for k in range(k_c):
            users = np.flatnonzero(A[k] != 0.0)
            if users.size == 0:
                order = np.argsort(-err, kind="stable")
                cand = next((int(i) for i in order if int(i) not in replaced and energy[i] > 1e-12), None)
                if cand is not None:
                    replaced.add(cand)
                    D[:, k] = X[:, cand] / math.sqrt(energy[cand])
                continue
            Ek = R[:, users] + np.outer(D[:, k], A[k, users])
            u = _leading_left_vector(Ek)
            if u is None:
                continue
            u = u if u[np.argmax(np.abs(u))] >= 0 else -u
            D[:, k] = u
            # coefficients optimal for the new atom
            A[k, users] = u @ Ek
            R[:, users] = Ek - np.outer(u, A[k, users])
        err = np.einsum("ij,ij->j", R, R)
        objective.append(float(err.sum()))

    return KsvdResult(D.T.reshape((k_c,) + shape).copy(), objective)


def extract_training_patches(images, canvas: int, count: int, seed: int = 0,
                             min_std: float = 2.0) -> np.ndarray:
    """Random zero-mean ``canvas x canvas`` patches from greyscale images."""
    rng = np.random.default_rng(seed)
    imgs = [np.asarray(im, dtype=np.float64) for im in images
            if min(np.shape(im)[:2]) >= canvas]
    if not imgs:
        raise DictionaryError(f"no training image is at least {canvas}x{canvas}")
    out = []
    attempts = 0
    while len(out) < count and attempts < 50 * count:
        attempts += 1
        im = imgs[int(rng.integers(len(imgs)))]
        y = int(rng.integers(im.shape[0] - canvas + 1))
        x = int(rng.integers(im.shape[1] - canvas + 1))
        p = im[y:y + canvas, x:x + canvas]
        if p.std() < min_std:
            continue
        out.append(p - p.mean())
    if len(out) < count:
        raise DictionaryError("could not collect enough textured training patches")
    return np.array(out)
