"""Recurrent skipping network: embeddings, stacked LSTM, skip combination, batch norm.

The forward pass caches everything the backward pass needs in a
:class:`ForwardTrace`; :meth:`RSN.backward` is its exact reverse-mode
derivative. Rows of the embedding table are entities ``0..n_ent-1``
followed by relations ``n_ent..n_ent+n_rel-1``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

VARIANTS = ("rsn", "rrn", "rnn")
CHECKPOINT_MAGIC = b"RSNKG-CKPT 1\n"


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)).astype(dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def scatter_rows(ids: np.ndarray, values: np.ndarray, n_rows: int) -> np.ndarray:
    """Sum ``values[i]`` into row ``ids[i]`` of an ``(n_rows, d)`` array."""
    ids = ids.ravel()
    values = values.reshape(len(ids), -1)
    m = sp.csr_matrix(
        (np.ones(len(ids), dtype=values.dtype), (ids, np.arange(len(ids)))),
        shape=(n_rows, len(ids)),
    )
    return np.asarray(m @ values)


def path_rows(paths: np.ndarray, n_ent: int) -> np.ndarray:
    """Map entity/relation ids of entity-first paths to embedding rows."""
    rows = np.array(paths, dtype=np.int64, copy=True)
    rows[:, 1::2] += n_ent
    return rows


def skip_combine(h: np.ndarray, x_prev: np.ndarray | None, S1: np.ndarray, S2: np.ndarray, is_relation: bool) -> np.ndarray:
    """Skip connection for one step: identity at entities, ``S1 h + S2 x_prev`` at relations."""
    if not is_relation:
        return h
    if x_prev is None:
        raise ValueError("relation step without a preceding entity")
    if h.shape[-1] != S1.shape[1] or x_prev.shape[-1] != S2.shape[1] or S1.shape[0] != S2.shape[0]:
        raise ValueError("dimension mismatch in skip combination")
    return h @ S1.T + x_prev @ S2.T


@dataclass
class ForwardTrace:
    rows: np.ndarray
    training: bool
    x: np.ndarray = None  # raw embeddings (B, T, d)
    bn_in: dict = field(default_factory=dict)
    layers: list = field(default_factory=list)
    masks: list = field(default_factory=list)  # inter-layer dropout masks, None when inactive
    hidden: np.ndarray = None  # top LSTM output before output dropout
    out_mask: np.ndarray | None = None
    dropped: np.ndarray = None  # hidden after output dropout
    skip_mask: np.ndarray | None = None  # dropout on the skipped entity embeddings
    combined: np.ndarray = None  # after the variant combination
    bn_out: dict = field(default_factory=dict)


class RSN:
    """Sequence model over relational paths, in RSN, RRN or RNN flavour."""

    def __init__(
        self,
        n_ent: int,
        n_rel: int,
        dim: int = 256,
        layers: int = 2,
        variant: str = "rsn",
        keep_prob: float = 0.5,
        seed: int = 0,
        dtype=np.float32,
        momentum: float = 0.9,
        eps: float = 1e-5,
        skip_dropout: bool = False,
    ):
        if n_ent < 1 or n_rel < 1:
            raise ValueError("vocabularies must be non-empty")
        if dim < 1 or layers < 1:
            raise ValueError("dim and layers must be >= 1")
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if not 0.0 < keep_prob <= 1.0:
            raise ValueError("keep_prob must lie in (0, 1]")
        self.n_ent, self.n_rel = n_ent, n_rel
        self.dim, self.num_layers = dim, layers
        self.variant = variant
        self.keep_prob = keep_prob
        self.dtype = np.dtype(dtype)
        self.momentum, self.eps = momentum, eps
        self.skip_dropout = skip_dropout
        rng = np.random.default_rng(seed)
        d, V = dim, n_ent + n_rel
        p = {"embeddings": xavier_uniform(rng, V, d, dtype=dtype)}
        p["bn_in_gamma"] = np.ones(d, dtype)
        p["bn_in_beta"] = np.zeros(d, dtype)
        for l in range(layers):
            p[f"lstm{l}_Wx"] = xavier_uniform(rng, d, 4 * d, dtype=dtype)
            p[f"lstm{l}_Wh"] = xavier_uniform(rng, d, 4 * d, dtype=dtype)
            p[f"lstm{l}_b"] = np.zeros(4 * d, dtype)
        if variant == "rsn":
            p["S1"] = xavier_uniform(rng, d, d, dtype=dtype)
            p["S2"] = xavier_uniform(rng, d, d, dtype=dtype)
        p["bn_out_gamma"] = np.ones(d, dtype)
        p["bn_out_beta"] = np.zeros(d, dtype)
        self.params: dict[str, np.ndarray] = p
        self.stats: dict[str, np.ndarray] = {
            "bn_in_mean": np.zeros(d, dtype),
            "bn_in_var": np.ones(d, dtype),
            "bn_out_mean": np.zeros(d, dtype),
            "bn_out_var": np.ones(d, dtype),
        }

    @property
    def vocab_size(self) -> int:
        return self.n_ent + self.n_rel

    @property
    def embeddings(self) -> np.ndarray:
        return self.params["embeddings"]

    def entity_embeddings(self) -> np.ndarray:
        return self.params["embeddings"][: self.n_ent]

    def astype(self, dtype) -> "RSN":
        self.dtype = np.dtype(dtype)
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.stats = {k: v.astype(dtype) for k, v in self.stats.items()}
        return self

    # -- batch norm --------------------------------------------------------

    def _bn_forward(self, x, prefix: str, training: bool, update_stats: bool):
        g, b = self.params[f"{prefix}_gamma"], self.params[f"{prefix}_beta"]
        flat = x.reshape(-1, x.shape[-1])
        if training:
            mean = flat.mean(axis=0)
            var = flat.var(axis=0)
            if update_stats:
                m = self.momentum
                self.stats[f"{prefix}_mean"] = (m * self.stats[f"{prefix}_mean"] + (1 - m) * mean).astype(self.dtype)
                self.stats[f"{prefix}_var"] = (m * self.stats[f"{prefix}_var"] + (1 - m) * var).astype(self.dtype)
        else:
            mean, var = self.stats[f"{prefix}_mean"], self.stats[f"{prefix}_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        return g * xhat + b, {"xhat": xhat, "inv_std": inv_std, "training": training}

    def _bn_backward(self, dy, cache, prefix: str, grads: dict):
        g = self.params[f"{prefix}_gamma"]
        xhat, inv_std = cache["xhat"], cache["inv_std"]
        d = dy.shape[-1]
        dy2, xh2 = dy.reshape(-1, d), xhat.reshape(-1, d)
        grads[f"{prefix}_gamma"] = (dy2 * xh2).sum(axis=0)
        grads[f"{prefix}_beta"] = dy2.sum(axis=0)
        dxhat = dy2 * g
        if not cache["training"]:
            return (dxhat * inv_std).reshape(dy.shape)
        n = dy2.shape[0]
        dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xh2 * (dxhat * xh2).sum(axis=0))
        return dx.reshape(dy.shape)

    # -- LSTM ----------------------------------------------------------------

    def _lstm_forward(self, x, l: int):
        # time-major buffers keep per-step slices contiguous
        Wx, Wh, b = self.params[f"lstm{l}_Wx"], self.params[f"lstm{l}_Wh"], self.params[f"lstm{l}_b"]
        B, T, _ = x.shape
        d = self.dim
        xt = np.ascontiguousarray(x.transpose(1, 0, 2))
        zx = (xt.reshape(T * B, -1) @ Wx).reshape(T, B, 4 * d)
        zx += b
        h = np.zeros((B, d), self.dtype)
        c = np.zeros((B, d), self.dtype)
        H = np.empty((T, B, d), self.dtype)
        C = np.empty((T, B, d), self.dtype)
        tanhC = np.empty((T, B, d), self.dtype)
        gates = zx  # overwritten in place with activations
        for t in range(T):
            z = gates[t]
            z += h @ Wh
            # gate blocks: input, forget, output, candidate
            z[:, : 3 * d] = sigmoid(z[:, : 3 * d])
            np.tanh(z[:, 3 * d :], out=z[:, 3 * d :])
            c = z[:, d : 2 * d] * c + z[:, :d] * z[:, 3 * d :]
            C[t] = c
            np.tanh(c, out=tanhC[t])
            np.multiply(z[:, 2 * d : 3 * d], tanhC[t], out=H[t])
            h = H[t]
        return H.transpose(1, 0, 2), {"xt": xt, "H": H, "C": C, "gates": gates, "tanhC": tanhC}

    def _lstm_backward(self, dH, cache, l: int, grads: dict):
        Wx, Wh = self.params[f"lstm{l}_Wx"], self.params[f"lstm{l}_Wh"]
        xt, H, C, gates, tanhC = cache["xt"], cache["H"], cache["C"], cache["gates"], cache["tanhC"]
        T, B, d = H.shape
        dHt = np.ascontiguousarray(dH.transpose(1, 0, 2))
        dZ = np.empty((T, B, 4 * d), self.dtype)
        dh_next = np.zeros((B, d), self.dtype)
        dc_next = np.zeros((B, d), self.dtype)
        WhT = np.ascontiguousarray(Wh.T)
        for t in range(T - 1, -1, -1):
            gt = gates[t]
            i, f, o, g = gt[:, :d], gt[:, d : 2 * d], gt[:, 2 * d : 3 * d], gt[:, 3 * d :]
            tc = tanhC[t]
            dh = dHt[t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dZ[t]
            dz[:, :d] = dc * g * i * (1.0 - i)
            if t > 0:
                dz[:, d : 2 * d] = dc * C[t - 1] * f * (1.0 - f)
            else:
                dz[:, d : 2 * d] = 0.0
            dz[:, 2 * d : 3 * d] = dh * tc * o * (1.0 - o)
            dz[:, 3 * d :] = dc * i * (1.0 - g * g)
            dc_next = dc * f
            dh_next = dz @ WhT
        dZ2 = dZ.reshape(T * B, 4 * d)
        H_prev = np.concatenate([np.zeros((1, B, d), self.dtype), H[:-1]], axis=0).reshape(T * B, d)
        grads[f"lstm{l}_Wx"] = xt.reshape(T * B, -1).T @ dZ2
        grads[f"lstm{l}_Wh"] = H_prev.T @ dZ2
        grads[f"lstm{l}_b"] = dZ2.sum(axis=0)
        return (dZ2 @ Wx.T).reshape(T, B, -1).transpose(1, 0, 2)

    # -- full model ----------------------------------------------------------

    def _dropout(self, shape, rng):
        keep = self.keep_prob
        return ((rng.random(shape) < keep) / keep).astype(self.dtype)

    def forward(self, paths: np.ndarray, training: bool = False, rng: np.random.Generator | None = None,
                update_stats: bool = True, rows: bool = False):
        """Run the model on an ``(B, T)`` batch of entity-first paths.

        Returns ``(outputs, trace)``; ``outputs[:, t]`` predicts element
        ``t + 1``. Dropout needs ``rng`` when ``training`` and ``keep_prob < 1``.
        """
        paths = np.asarray(paths, dtype=np.int64)
        if paths.ndim != 2:
            raise ValueError("paths must be a (batch, time) array")
        r = paths if rows else path_rows(paths, self.n_ent)
        if r.size and (r.min() < 0 or r.max() >= self.vocab_size):
            raise ValueError("path element out of vocabulary")
        if not rows:
            ent = paths[:, 0::2]
            rel = paths[:, 1::2]
            if (ent >= self.n_ent).any() or (rel >= self.n_rel).any():
                raise ValueError("path element out of vocabulary")
        dropout = training and self.keep_prob < 1.0
        if dropout and rng is None:
            raise ValueError("training with dropout requires an rng")
        tr = ForwardTrace(rows=r, training=training)
        B, T = r.shape
        tr.x = self.params["embeddings"][r]
        inp, tr.bn_in = self._bn_forward(tr.x, "bn_in", training, update_stats)
        for l in range(self.num_layers):
            H, cache = self._lstm_forward(inp, l)
            tr.layers.append(cache)
            if l < self.num_layers - 1:
                mask = self._dropout(H.shape, rng) if dropout else None
                tr.masks.append(mask)
                inp = H * mask if mask is not None else H
            else:
                inp = H
        tr.hidden = inp
        tr.out_mask = self._dropout(inp.shape, rng) if dropout else None
        tr.dropped = inp * tr.out_mask if tr.out_mask is not None else inp
        if dropout and self.skip_dropout and self.variant == "rsn":
            tr.skip_mask = self._dropout(tr.x.shape, rng)
        tr.combined = self._combine(tr.dropped, tr.x if tr.skip_mask is None else tr.x * tr.skip_mask)
        out, tr.bn_out = self._bn_forward(tr.combined, "bn_out", training, update_stats)
        return out, tr

    def _combine(self, h, x):
        if self.variant == "rnn":
            return h
        if self.variant == "rrn":
            out = h.copy()
            out[:, 1:] += h[:, :-1]
            return out
        out = h.copy()
        S1, S2 = self.params["S1"], self.params["S2"]
        out[:, 1::2] = skip_combine(h[:, 1::2], x[:, 0:-1:2][:, : h[:, 1::2].shape[1]], S1, S2, True)
        return out

    def backward(self, trace: ForwardTrace, d_out: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of ``sum(d_out * outputs)`` w.r.t. every parameter (dense)."""
        if d_out.shape != trace.combined.shape:
            raise ValueError(f"upstream gradient shape {d_out.shape} != output shape {trace.combined.shape}")
        d_out = d_out.astype(self.dtype, copy=False)
        grads: dict[str, np.ndarray] = {}
        dc = self._bn_backward(d_out, trace.bn_out, "bn_out", grads)
        dx_skip = None
        if self.variant == "rnn":
            dh = dc
        elif self.variant == "rrn":
            dh = dc.copy()
            dh[:, :-1] += dc[:, 1:]
        else:
            S1, S2 = self.params["S1"], self.params["S2"]
            dh = dc.copy()
            drel = dc[:, 1::2]
            n_rel_steps = drel.shape[1]
            hrel = trace.dropped[:, 1::2]
            x = trace.x if trace.skip_mask is None else trace.x * trace.skip_mask
            xprev = x[:, 0:-1:2][:, :n_rel_steps]
            d = self.dim
            dh[:, 1::2] = drel @ S1
            grads["S1"] = drel.reshape(-1, d).T @ hrel.reshape(-1, d)
            grads["S2"] = drel.reshape(-1, d).T @ xprev.reshape(-1, d)
            dx_skip = np.zeros_like(trace.x)
            dx_skip[:, 0:-1:2][:, :n_rel_steps] = drel @ S2
            if trace.skip_mask is not None:
                dx_skip *= trace.skip_mask
        if trace.out_mask is not None:
            dh = dh * trace.out_mask
        for l in range(self.num_layers - 1, -1, -1):
            dinp = self._lstm_backward(dh, trace.layers[l], l, grads)
            if l > 0:
                mask = trace.masks[l - 1]
                dh = dinp * mask if mask is not None else dinp
        dx = self._bn_backward(dinp, trace.bn_in, "bn_in", grads)
        if dx_skip is not None:
            dx = dx + dx_skip
        grads["embeddings"] = scatter_rows(trace.rows, dx, self.vocab_size).astype(self.dtype, copy=False)
        return {k: grads[k] for k in self.params}

    def predict(self, paths: np.ndarray) -> np.ndarray:
        """Inference-mode outputs; running statistics are left untouched."""
        out, _ = self.forward(paths, training=False, update_stats=False)
        return out

    # -- checkpoints -------------------------------------------------------

    def param_order(self) -> list[str]:
        return list(self.params) + list(self.stats)

    def save(self, path: str | Path, graph_checksum: str = "") -> None:
        """Binary checkpoint.

        Layout: ``RSNKG-CKPT 1\\n``, one header line of space-separated
        ``key=value`` pairs ending in ``\\n``, then each block of
        :meth:`param_order` as a little-endian uint32 element count followed
        by row-major little-endian float32 values.
        """
        header = (
            f"dim={self.dim} layers={self.num_layers} n_ent={self.n_ent} n_rel={self.n_rel} "
            f"variant={self.variant} keep_prob={self.keep_prob!r} graph={graph_checksum or '-'}\n"
        )
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(header.encode("ascii"))
            for name in self.param_order():
                arr = self.params[name] if name in self.params else self.stats[name]
                fh.write(struct.pack("<I", arr.size))
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path, graph_checksum: str | None = None) -> "RSN":
        with open(path, "rb") as fh:
            if fh.readline() != CHECKPOINT_MAGIC:
                raise ValueError(f"{path}: not a checkpoint")
            meta = dict(kv.split("=", 1) for kv in fh.readline().decode("ascii").split())
            if graph_checksum is not None and meta["graph"] not in ("-", graph_checksum):
                raise ValueError(f"{path}: checkpoint was trained on a different graph")
            model = cls(
                int(meta["n_ent"]), int(meta["n_rel"]), int(meta["dim"]), int(meta["layers"]),
                meta["variant"], float(meta["keep_prob"]),
            )
            for name in model.param_order():
                target = model.params if name in model.params else model.stats
                (size,) = struct.unpack("<I", fh.read(4))
                if size != target[name].size:
                    raise ValueError(f"{path}: block {name} has {size} values, expected {target[name].size}")
                data = np.frombuffer(fh.read(4 * size), dtype="<f4")
                target[name] = data.reshape(target[name].shape).astype(np.float32)
        model.graph_checksum = meta["graph"]
        return model
