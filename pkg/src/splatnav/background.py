"""Direction-encoded background MLP and the camera-position appearance MLP.

The background colour for a ray is

    sigmoid(MLP([Y(direction), embed(camera_position)]))

where ``Y`` is the real spherical-harmonic basis up to ``sh_degree`` and
``embed`` is a small MLP of the (scaled) camera centre only. Both networks
use tanh hidden units. Training is full-batch gradient descent on the
masked L1 floor loss, with gradients derived by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SH_C0 = 0.28209479177387814  # 1 / (2 sqrt(pi))
MAX_SH_DEGREE = 4


def sh_basis(direction, degree: int) -> np.ndarray:
    """Real spherical harmonics Y_lm for l <= degree, ordered (l, m) with m = -l..l.

    ``direction`` may be a single 3-vector or an (N, 3) array. Vectors within
    1e-3 of unit length are renormalised; anything further off raises.
    """
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise ValueError(f"sh degree must be in [0, {MAX_SH_DEGREE}]")
    d = np.asarray(direction, dtype=np.float64)
    single = d.ndim == 1
    d = d.reshape(-1, 3)
    n = np.linalg.norm(d, axis=1)
    if np.any(np.abs(n - 1.0) > 1e-3):
        raise ValueError("sh_basis expects unit directions")
    d = d / n[:, None]
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    out = np.empty((d.shape[0], (degree + 1) ** 2))
    out[:, 0] = SH_C0
    if degree >= 1:
        c1 = np.sqrt(3.0 / (4 * np.pi))
        out[:, 1] = c1 * y
        out[:, 2] = c1 * z
        out[:, 3] = c1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = 0.5 * np.sqrt(15 / np.pi) * x * y
        out[:, 5] = 0.5 * np.sqrt(15 / np.pi) * y * z
        out[:, 6] = 0.25 * np.sqrt(5 / np.pi) * (3 * zz - 1)
        out[:, 7] = 0.5 * np.sqrt(15 / np.pi) * x * z
        out[:, 8] = 0.25 * np.sqrt(15 / np.pi) * (xx - yy)
    if degree >= 3:
        out[:, 9] = 0.25 * np.sqrt(35 / (2 * np.pi)) * y * (3 * xx - yy)
        out[:, 10] = 0.5 * np.sqrt(105 / np.pi) * x * y * z
        out[:, 11] = 0.25 * np.sqrt(21 / (2 * np.pi)) * y * (5 * zz - 1)
        out[:, 12] = 0.25 * np.sqrt(7 / np.pi) * z * (5 * zz - 3)
        out[:, 13] = 0.25 * np.sqrt(21 / (2 * np.pi)) * x * (5 * zz - 1)
        out[:, 14] = 0.25 * np.sqrt(105 / np.pi) * z * (xx - yy)
        out[:, 15] = 0.25 * np.sqrt(35 / (2 * np.pi)) * x * (xx - 3 * yy)
    if degree >= 4:
        out[:, 16] = 0.75 * np.sqrt(35 / np.pi) * x * y * (xx - yy)
        out[:, 17] = 0.75 * np.sqrt(35 / (2 * np.pi)) * y * z * (3 * xx - yy)
        out[:, 18] = 0.75 * np.sqrt(5 / np.pi) * x * y * (7 * zz - 1)
        out[:, 19] = 0.75 * np.sqrt(5 / (2 * np.pi)) * y * z * (7 * zz - 3)
        out[:, 20] = 3 / 16 * np.sqrt(1 / np.pi) * (35 * zz * zz - 30 * zz + 3)
        out[:, 21] = 0.75 * np.sqrt(5 / (2 * np.pi)) * x * z * (7 * zz - 3)
        out[:, 22] = 3 / 8 * np.sqrt(5 / np.pi) * (xx - yy) * (7 * zz - 1)
        out[:, 23] = 0.75 * np.sqrt(35 / (2 * np.pi)) * x * z * (xx - 3 * yy)
        out[:, 24] = 3 / 16 * np.sqrt(35 / np.pi) * (xx * (xx - 3 * yy) - yy * (3 * xx - yy))
    return out[0] if single else out


def sh_to_rgb(sh_coeffs: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Per-Gaussian colour from SH coefficients, 3DGS convention: clip(sum_k c_k Y_k(d) + 0.5, 0, 1).

    sh_coeffs: (N, K, 3); directions: (N, 3) unit vectors from camera to Gaussian.
    """
    k = sh_coeffs.shape[1]
    deg = int(round(np.sqrt(k))) - 1
    if deg == 0:
        rgb = SH_C0 * sh_coeffs[:, 0, :]
    else:
        Y = sh_basis(directions, deg)
        rgb = np.einsum("nk,nkc->nc", Y, sh_coeffs)
    return np.clip(rgb + 0.5, 0.0, 1.0)


def rgb_to_sh0(rgb) -> np.ndarray:
    """DC coefficient(s) reproducing ``rgb``: (3,) -> (1, 3), (N, 3) -> (N, 1, 3)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    c = (rgb - 0.5) / SH_C0
    return c.reshape(1, 3) if rgb.ndim == 1 else c.reshape(-1, 1, 3)


@dataclass
class MlpWeights:
    weights: list[np.ndarray]  # (out, in) per layer
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("need one bias per weight matrix")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match {W.shape}")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input width {W.shape[1]} != previous output")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError("MLP weights must be finite")

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator, gain: float = 1.0) -> "MlpWeights":
        Ws, bs = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            Ws.append(rng.normal(0.0, gain / np.sqrt(n_in), size=(n_out, n_in)))
            bs.append(np.zeros(n_out))
        return cls(Ws, bs)

    @classmethod
    def zeros(cls, sizes: list[int]) -> "MlpWeights":
        return cls([np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])], [np.zeros(o) for o in sizes[1:]])

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "MlpWeights":
        return MlpWeights([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Pre-activation output of the last layer plus the inputs seen by each layer."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W.T + b
            if i < last:
                h = np.tanh(z)
                acts.append(h)
            else:
                h = z
        return h, acts

    def backward(self, acts: list[np.ndarray], dout: np.ndarray):
        """Given dL/d(last pre-activation), return (dW list, db list, dL/dinput)."""
        dWs = [None] * len(self.weights)
        dbs = [None] * len(self.weights)
        g = dout
        for i in range(len(self.weights) - 1, -1, -1):
            a = acts[i]
            dWs[i] = g.T @ a
            dbs[i] = g.sum(axis=0)
            g = g @ self.weights[i]
            if i > 0:
                g = g * (1.0 - a * a)  # tanh'
        return dWs, dbs, g


@dataclass
class AppearanceMLP:
    mlp: MlpWeights
    position_scale: float = 1.0  # positions are divided by this (scene bbox diagonal)

    @classmethod
    def init(cls, embed_dim: int = 16, hidden: int = 32, seed: int = 0, position_scale: float = 1.0,
             gain: float = 1.0) -> "AppearanceMLP":
        rng = np.random.default_rng(seed)
        return cls(MlpWeights.init([3, hidden, hidden, embed_dim], rng, gain), float(position_scale))

    @property
    def embed_dim(self) -> int:
        return self.mlp.out_dim

    def copy(self) -> "AppearanceMLP":
        return AppearanceMLP(self.mlp.copy(), self.position_scale)

    def lipschitz_bound(self) -> float:
        """Upper bound on |embed(p) - embed(q)| / |p - q| (tanh is 1-Lipschitz)."""
        return float(np.prod([np.linalg.norm(W, 2) for W in self.mlp.weights])) / self.position_scale


@dataclass
class BackgroundModel:
    mlp: MlpWeights
    sh_degree: int = 4
    embed_dim: int = 16

    def __post_init__(self):
        if self.mlp.in_dim != (self.sh_degree + 1) ** 2 + self.embed_dim:
            raise ValueError("background MLP input width must be (L+1)^2 + D")
        if self.mlp.out_dim != 3:
            raise ValueError("background MLP must output RGB")

    @classmethod
    def init(cls, sh_degree: int = 4, hidden: int = 64, embed_dim: int = 16, seed: int = 0,
             gain: float = 1.0) -> "BackgroundModel":
        rng = np.random.default_rng(seed)
        n_in = (sh_degree + 1) ** 2 + embed_dim
        return cls(MlpWeights.init([n_in, hidden, hidden, 3], rng, gain), sh_degree, embed_dim)

    @classmethod
    def zeros(cls, sh_degree: int = 4, hidden: int = 64, embed_dim: int = 16) -> "BackgroundModel":
        n_in = (sh_degree + 1) ** 2 + embed_dim
        return cls(MlpWeights.zeros([n_in, hidden, hidden, 3]), sh_degree, embed_dim)

    def copy(self) -> "BackgroundModel":
        return BackgroundModel(self.mlp.copy(), self.sh_degree, self.embed_dim)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def appearance_embedding(model: AppearanceMLP, cam_position) -> np.ndarray:
    p = np.asarray(cam_position, dtype=np.float64)
    single = p.ndim == 1
    out, _ = model.mlp.forward(p.reshape(-1, 3) / model.position_scale)
    return out[0] if single else out


def eval_background(bg: BackgroundModel, app: AppearanceMLP, direction, cam_position) -> np.ndarray:
    """Background RGB in [0, 1] for one or many ray directions.

    ``direction`` is (3,) or (N, 3); ``cam_position`` is (3,) (shared) or (N, 3).
    """
    d = np.asarray(direction, dtype=np.float64)
    single = d.ndim == 1
    d = d.reshape(-1, 3)
    p = np.asarray(cam_position, dtype=np.float64).reshape(-1, 3)
    emb = appearance_embedding(app, p)
    if emb.shape[0] == 1 and d.shape[0] > 1:
        emb = np.broadcast_to(emb, (d.shape[0], emb.shape[1]))
    x = np.concatenate([sh_basis(d, bg.sh_degree), emb], axis=1)
    z, _ = bg.mlp.forward(x)
    rgb = _sigmoid(z)
    return rgb[0] if single else rgb


@dataclass
class BackgroundSamples:
    directions: np.ndarray  # (N, 3) unit
    positions: np.ndarray  # (N, 3) camera centres
    targets: np.ndarray  # (N, 3) RGB
    weights: np.ndarray  # (N,) floor-mask values

    @classmethod
    def from_list(cls, samples) -> "BackgroundSamples":
        d, p, t, w = zip(*samples)
        return cls(np.array(d, dtype=np.float64), np.array(p, dtype=np.float64),
                   np.array(t, dtype=np.float64), np.array(w, dtype=np.float64))

    def __len__(self):
        return len(self.weights)

    def subset(self, idx) -> "BackgroundSamples":
        return BackgroundSamples(self.directions[idx], self.positions[idx], self.targets[idx], self.weights[idx])


@dataclass
class Gradients:
    bg_W: list[np.ndarray]
    bg_b: list[np.ndarray]
    app_W: list[np.ndarray]
    app_b: list[np.ndarray]


def loss_and_grads(bg: BackgroundModel, app: AppearanceMLP, samples: BackgroundSamples,
                   smooth_eps: float = 0.0) -> tuple[float, Gradients]:
    """Masked L1 between background prediction and target, with its gradient.

    loss = sum_i w_i sum_c rho(pred_ic - target_ic) / (3 sum_i w_i),
    rho(r) = |r| (subgradient 0 at r = 0) or sqrt(r^2 + smooth_eps) when smooth_eps > 0.
    """
    w = samples.weights
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("empty floor mask")
    dirs = samples.directions / np.linalg.norm(samples.directions, axis=1, keepdims=True)
    emb, app_acts = app.mlp.forward(samples.positions / app.position_scale)
    x = np.concatenate([sh_basis(dirs, bg.sh_degree), emb], axis=1)
    z, bg_acts = bg.mlp.forward(x)
    pred = _sigmoid(z)
    r = pred - samples.targets
    if smooth_eps > 0:
        rho = np.sqrt(r * r + smooth_eps)
        drho = r / rho
    else:
        rho = np.abs(r)
        drho = np.sign(r)
    norm = 3.0 * wsum
    loss = float(np.sum(w[:, None] * rho) / norm)
    dpred = w[:, None] * drho / norm
    dz = dpred * pred * (1.0 - pred)
    dWb, dbb, dx = bg.mlp.backward(bg_acts, dz)
    demb = dx[:, (bg.sh_degree + 1) ** 2:]
    dWa, dba, _ = app.mlp.backward(app_acts, demb)
    return loss, Gradients(dWb, dbb, dWa, dba)


def train_background(bg: BackgroundModel, app: AppearanceMLP, samples, steps: int = 2000,
                     learning_rate: float = 0.01, seed: int = 0, batch_size: int | None = None):
    """Fit both MLPs to floor samples by plain gradient descent.

    ``samples`` is a BackgroundSamples or a list of (direction, cam_position,
    target_rgb, weight) tuples. With ``batch_size=None`` every step is full
    batch and ``seed`` is unused. The inputs are not modified.

    Returns (bg', app', loss_history) where loss_history[k] is the full-data
    loss before step k, plus a final entry after the last step.
    """
    if not isinstance(samples, BackgroundSamples):
        samples = BackgroundSamples.from_list(samples)
    if not np.any(samples.weights > 0):
        raise ValueError("empty floor mask")
    bg, app = bg.copy(), app.copy()
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(steps):
        if batch_size is None or batch_size >= len(samples):
            batch = samples
        else:
            batch = samples.subset(rng.choice(len(samples), size=batch_size, replace=False))
            if batch.weights.sum() <= 0:
                continue
        loss, g = loss_and_grads(bg, app, batch)
        if batch is samples:
            history.append(loss)
        else:
            history.append(loss_and_grads(bg, app, samples)[0])
        for W, dW in zip(bg.mlp.weights, g.bg_W):
            W -= learning_rate * dW
        for b, db in zip(bg.mlp.biases, g.bg_b):
            b -= learning_rate * db
        for W, dW in zip(app.mlp.weights, g.app_W):
            W -= learning_rate * dW
        for b, db in zip(app.mlp.biases, g.app_b):
            b -= learning_rate * db
    history.append(loss_and_grads(bg, app, samples)[0])
    return bg, app, np.array(history)
