"""Subject adapters, the shared mapper, their losses and exact gradients."""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import erf

from ..errors import ShapeError
from ..tensor import as_matrix, matrix_from_bytes, matrix_to_bytes

ADAPTER_KINDS = ("linear", "linear_gelu", "linear_relu", "two_layer_linear")
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact GELU, ``0.5 x (1 + erf(x / sqrt 2))``; scalar in, scalar out."""
    out = 0.5 * np.asarray(x, dtype=np.float64) * (1.0 + erf(np.asarray(x, dtype=np.float64) / _SQRT2))
    return float(out) if np.ndim(out) == 0 else out


def gelu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _uniform_init(rng, fan_out, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass
class AdapterModel:
    kind: str
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray | None = None
    b2: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ADAPTER_KINDS:
            raise ValueError(f"unknown adapter kind {self.kind!r}")
        two = self.kind == "two_layer_linear"
        if two != (self.W2 is not None and self.b2 is not None):
            raise ValueError(f"{self.kind} adapter has the wrong number of layers")
        if self.b1.shape != (self.W1.shape[0],):
            raise ShapeError("b1 must match W1 rows")
        if two and (self.W2.shape[1] != self.W1.shape[0] or self.b2.shape != (self.W2.shape[0],)):
            raise ShapeError("second layer does not chain onto the first")

    @classmethod
    def init(cls, kind, in_dim, out_dim, rng, hidden_dim=None):
        if kind == "two_layer_linear":
            hidden_dim = hidden_dim or out_dim
            return cls(
                kind,
                _uniform_init(rng, hidden_dim, in_dim),
                np.zeros(hidden_dim),
                _uniform_init(rng, out_dim, hidden_dim),
                np.zeros(out_dim),
            )
        return cls(kind, _uniform_init(rng, out_dim, in_dim), np.zeros(out_dim))

    @property
    def in_dim(self):
        return self.W1.shape[1]

    @property
    def out_dim(self):
        return self.W2.shape[0] if self.W2 is not None else self.W1.shape[0]

    def params(self):
        p = {"W1": self.W1, "b1": self.b1}
        if self.W2 is not None:
            p.update(W2=self.W2, b2=self.b2)
        return p

    def with_params(self, params):
        return replace(self, **{k: np.array(v, dtype=np.float64) for k, v in params.items()})

    def effective_weight(self):
        """Weight of the final linear map from input to common space."""
        return self.W1 if self.W2 is None else self.W2 @ self.W1

    def copy(self):
        return self.with_params(self.params())


@dataclass
class MapperModel:
    W_h: np.ndarray
    b_h: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray
    residual: bool = False
    activation: str = field(default="gelu")

    def __post_init__(self):
        if self.W_o.shape[1] != self.W_h.shape[0]:
            raise ShapeError("mapper hidden dims do not chain")
        if self.b_h.shape != (self.W_h.shape[0],) or self.b_o.shape != (self.W_o.shape[0],):
            raise ShapeError("mapper biases do not match weights")
        if self.residual and self.common_dim != self.target_dim:
            raise ShapeError(
                f"residual needs common dim == target dim, got {self.common_dim} vs {self.target_dim}"
            )

    @classmethod
    def init(cls, common_dim, hidden_dim, target_dim, rng, residual=None):
        if residual is None:
            residual = common_dim == target_dim
        return cls(
            _uniform_init(rng, hidden_dim, common_dim),
            np.zeros(hidden_dim),
            _uniform_init(rng, target_dim, hidden_dim),
            np.zeros(target_dim),
            residual=residual,
        )

    @property
    def common_dim(self):
        return self.W_h.shape[1]

    @property
    def target_dim(self):
        return self.W_o.shape[0]

    def params(self):
        return {"W_h": self.W_h, "b_h": self.b_h, "W_o": self.W_o, "b_o": self.b_o}

    def with_params(self, params):
        return replace(self, **{k: np.array(v, dtype=np.float64) for k, v in params.items()})

    def copy(self):
        return self.with_params(self.params())


# -- forward passes -------------------------------------------------------


def _adapter_pass(a, X):
    X = as_matrix(X, "X")
    if X.shape[1] != a.in_dim:
        raise ShapeError(f"adapter expects {a.in_dim} input columns, got {X.shape[1]}")
    pre = X @ a.W1.T + a.b1
    if a.kind == "linear":
        return pre, (X, pre, None)
    if a.kind == "linear_gelu":
        return gelu(pre), (X, pre, None)
    if a.kind == "linear_relu":
        return np.maximum(pre, 0.0), (X, pre, None)
    out = pre @ a.W2.T + a.b2
    return out, (X, pre, None)


def adapter_forward(a, X):
    return _adapter_pass(a, X)[0]


def _mapper_pass(m, Z):
    if Z.shape[1] != m.common_dim:
        raise ShapeError(f"mapper expects {m.common_dim} input columns, got {Z.shape[1]}")
    pre = Z @ m.W_h.T + m.b_h
    H = gelu(pre)
    out = H @ m.W_o.T + m.b_o
    if m.residual:
        out = out + Z
    return out, (Z, pre, H)


def mapper_forward(m, Z):
    return _mapper_pass(m, as_matrix(Z, "Z"))[0]


def predict(a, m, X):
    Z = adapter_forward(a, X)
    return Z if m is None else mapper_forward(m, Z)


def mse_loss(P, T):
    P = np.asarray(P, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if P.shape != T.shape:
        raise ShapeError(f"mse_loss shape mismatch {P.shape} vs {T.shape}")
    return float(np.mean((P - T) ** 2))


# -- backward passes ------------------------------------------------------


def _adapter_backward(a, cache, dZ):
    X, pre, _ = cache
    grads = {}
    if a.kind == "two_layer_linear":
        grads["W2"] = dZ.T @ pre
        grads["b2"] = dZ.sum(axis=0)
        dpre = dZ @ a.W2
    elif a.kind == "linear_gelu":
        dpre = dZ * gelu_grad(pre)
    elif a.kind == "linear_relu":
        dpre = dZ * (pre > 0)
    else:
        dpre = dZ
    grads["W1"] = dpre.T @ X
    grads["b1"] = dpre.sum(axis=0)
    return grads


def _mapper_backward(m, cache, dO):
    Z, pre, H = cache
    grads = {"W_o": dO.T @ H, "b_o": dO.sum(axis=0)}
    dpre = (dO @ m.W_o) * gelu_grad(pre)
    grads["W_h"] = dpre.T @ Z
    grads["b_h"] = dpre.sum(axis=0)
    dZ = dpre @ m.W_h
    if m.residual:
        dZ = dZ + dO
    return grads, dZ


@dataclass
class LossBreakdown:
    total: float
    output_mse: float
    adapter_mse: float


def loss_and_gradients(a, m, X, T_out=None, T_adapter=None, lambda3=1.0, common_idx=None):
    """Combined loss and exact parameter gradients.

    ``L = MSE(mapper(adapter(X)), T_out) + lambda3 * MSE(adapter(X)[common_idx], T_adapter)``

    Either term may be switched off by passing ``None`` for its target.  With
    ``m=None`` the output term compares the adapter output directly.
    ``common_idx`` selects the rows of ``X`` that ``T_adapter`` is matched to
    (all rows when omitted).  Gradient keys are prefixed ``adapter.`` /
    ``mapper.``.
    """
    Z, a_cache = _adapter_pass(a, X)
    dZ = np.zeros_like(Z)
    grads = {}
    out_mse = float("nan")
    ad_mse = float("nan")
    total = 0.0
    if T_out is not None:
        if m is None:
            O = Z
        else:
            O, m_cache = _mapper_pass(m, Z)
        T_out = np.asarray(T_out, dtype=np.float64)
        if O.shape != T_out.shape:
            raise ShapeError(f"output targets shape {T_out.shape} != predictions {O.shape}")
        diff = O - T_out
        out_mse = float(np.mean(diff**2))
        total += out_mse
        dO = 2.0 * diff / diff.size
        if m is None:
            dZ += dO
        else:
            mg, dZm = _mapper_backward(m, m_cache, dO)
            grads.update({f"mapper.{k}": v for k, v in mg.items()})
            dZ += dZm
    if T_adapter is not None:
        idx = np.arange(Z.shape[0]) if common_idx is None else np.asarray(common_idx, dtype=int)
        T_adapter = np.asarray(T_adapter, dtype=np.float64)
        Zc = Z[idx]
        if Zc.shape != T_adapter.shape:
            raise ShapeError(f"adapter targets shape {T_adapter.shape} != {Zc.shape}")
        if idx.size:
            diff = Zc - T_adapter
            ad_mse = float(np.mean(diff**2))
            total += lambda3 * ad_mse
            np.add.at(dZ, idx, lambda3 * 2.0 * diff / diff.size)
    if m is not None and T_out is None:
        grads.update({f"mapper.{k}": np.zeros_like(v) for k, v in m.params().items()})
    grads.update({f"adapter.{k}": v for k, v in _adapter_backward(a, a_cache, dZ).items()})
    return LossBreakdown(total, out_mse, ad_mse), grads


def gradients(a, m, X, T_out, T_adapter=None, lambda3=1.0, common_idx=None):
    return loss_and_gradients(a, m, X, T_out, T_adapter, lambda3, common_idx)[1]


# -- model files ----------------------------------------------------------


def _encode(arr):
    return base64.b64encode(matrix_to_bytes(np.atleast_2d(arr))).decode("ascii")


def _decode(text, vector=False):
    M = matrix_from_bytes(base64.b64decode(text))
    return M[0] if vector else M


def model_to_dict(model):
    if isinstance(model, AdapterModel):
        d = {"kind": model.kind, "in_dim": model.in_dim, "out_dim": model.out_dim}
        if model.W2 is not None:
            d["hidden_dim"] = model.W1.shape[0]
    else:
        d = {
            "kind": "mapper",
            "common_dim": model.common_dim,
            "hidden_dim": model.W_h.shape[0],
            "target_dim": model.target_dim,
            "activation": model.activation,
            "residual": model.residual,
        }
    d["params"] = {
        k: {"shape": list(np.shape(v)), "ramx": _encode(v)} for k, v in model.params().items()
    }
    return d


def model_from_dict(d):
    params = {k: _decode(v["ramx"], vector=len(v["shape"]) == 1) for k, v in d["params"].items()}
    if d["kind"] == "mapper":
        return MapperModel(residual=bool(d["residual"]), activation=d.get("activation", "gelu"), **params)
    return AdapterModel(kind=d["kind"], **params)


def save_model(model, path):
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
