"""Feature extractors, scoring functions and argmax action selection.

Action types are numbered as in the branch-and-cut loop: 1 = node selection,
2 = cut selection, 3 = branching-variable selection. Each type has one
four-dimensional feature extractor:

``node4``   (z_LP / (|z_root| + 1), depth / M, (UB - z_LP) / (|UB| + 1), id / next_id)
``cut4``    (efficacy, objective parallelism, directed cutoff distance, integral support)
``branch4`` (min(f, 1 - f), |c_j| / max|c|, nnz(A_j) / m, f)

Scores are computed row-wise on a candidate feature matrix, so the same call
is used during search and when replaying recorded decisions.

MLP parameters are stored flat, layer by layer; within a layer the weight
matrix (out x in, row-major) comes first and then the bias vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NODE, CUT, BRANCH = 1, 2, 3
ACTION_NAMES = {NODE: "node", CUT: "cut", BRANCH: "branch"}
EXTRACTORS = {"node4": 4, "cut4": 4, "branch4": 4}
DEFAULT_EXTRACTOR = {NODE: "node4", CUT: "cut4", BRANCH: "branch4"}
NONZERO_TOL = 1e-12
DCD_TOL = 1e-9
POLICY_SCHEMA = "bnclab.policy/1"


class PolicyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# cut features


def efficacy(x_lp, cut) -> float:
    alpha = np.asarray(cut.alpha, float)
    norm = np.linalg.norm(alpha)
    if norm == 0.0:
        raise PolicyError("efficacy undefined for a zero cut normal")
    return float((alpha @ np.asarray(x_lp, float) - cut.beta) / norm)


def objective_parallelism(c, cut) -> float:
    alpha = np.asarray(cut.alpha, float)
    c = np.asarray(c, float)
    na, nc = np.linalg.norm(alpha), np.linalg.norm(c)
    if na == 0.0 or nc == 0.0:
        raise PolicyError("objective parallelism needs nonzero cut normal and objective")
    return float(min(1.0, abs(alpha @ c) / (na * nc)))


def directed_cutoff_distance(x_lp, incumbent, cut) -> tuple[float, bool]:
    """Returns ``(value, defined)``; degenerate directions map to ``(0.0, False)``."""
    if incumbent is None:
        return 0.0, False
    x_lp = np.asarray(x_lp, float)
    direction = np.asarray(incumbent, float) - x_lp
    dist = np.linalg.norm(direction)
    if dist <= DCD_TOL:
        return 0.0, False
    alpha = np.asarray(cut.alpha, float)
    proj = abs(alpha @ direction)
    if proj <= DCD_TOL:
        return 0.0, False
    return float((alpha @ x_lp - cut.beta) / (proj / dist)), True


def integral_support(cut, n1: int) -> float:
    nz = np.abs(np.asarray(cut.alpha, float)) > NONZERO_TOL
    total = int(nz.sum())
    if total == 0:
        raise PolicyError("integral support undefined for a zero cut normal")
    return int(nz[:n1].sum()) / total


def cut_features(x_lp, c, incumbent, cut, n1: int) -> np.ndarray:
    par = objective_parallelism(c, cut) if np.any(np.asarray(c) != 0) else 0.0
    dcd, _ = directed_cutoff_distance(x_lp, incumbent, cut)
    return np.array([efficacy(x_lp, cut), par, dcd, integral_support(cut, n1)])


# ---------------------------------------------------------------------------
# node and branching features


def node_features(z_est, depth, node_id, *, z_root, ub, next_id, max_rounds) -> np.ndarray:
    z_known = z_est is not None and math.isfinite(z_est)
    root_scale = abs(z_root) + 1.0 if z_root is not None and math.isfinite(z_root) else 1.0
    zf = z_est / root_scale if z_known else 0.0
    if z_known and math.isfinite(ub):
        gap = (ub - z_est) / (abs(ub) + 1.0)
    else:
        gap = 1.0
    return np.array([zf, depth / max_rounds, gap, node_id / max(next_id, 1)])


def branch_features(x_lp, j: int, c, col_density) -> np.ndarray:
    v = float(x_lp[j])
    f = v - math.floor(v)
    cmax = float(np.max(np.abs(c))) if len(c) else 0.0
    cn = abs(float(c[j])) / cmax if cmax > 0 else 0.0
    return np.array([min(f, 1.0 - f), cn, col_density[j], f])


def extract_features(kind: str, state, action) -> np.ndarray:
    """Feature vector for one (state, action) pair; ``state`` is a search-state view."""
    if kind == "cut4":
        return cut_features(state.x_lp, state.c, state.incumbent, action, state.n1)
    if kind == "branch4":
        return branch_features(state.x_lp, action, state.c, state.col_density)
    if kind == "node4":
        return node_features(
            action.z_est, action.depth, action.id,
            z_root=state.z_root, ub=state.ub, next_id=state.next_id, max_rounds=state.max_rounds,
        )
    raise PolicyError(f"unknown feature extractor {kind!r}")


# ---------------------------------------------------------------------------
# scorers


@dataclass(frozen=True, eq=False)
class LinearScorer:
    w: np.ndarray

    kind = "linear"

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).ravel())

    @property
    def n_params(self) -> int:
        return len(self.w)

    @property
    def input_dim(self) -> int:
        return len(self.w)

    def score_batch(self, phi: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi, float)
        if phi.ndim != 2 or phi.shape[1] != len(self.w):
            raise PolicyError(f"feature width {phi.shape[-1]} does not match {len(self.w)} weights")
        return (phi * self.w).sum(axis=1)

    def score_params(self, P: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """Scores for a batch of parameter vectors: (T, W) x (c, d) -> (T, c)."""
        return np.asarray(P, float) @ np.asarray(phi, float).T

    def with_params(self, w) -> "LinearScorer":
        return LinearScorer(np.asarray(w, float))


@dataclass(frozen=True)
class PiecewisePolynomial:
    """Activation given by ordered pieces; piece i covers (breaks[i-1], breaks[i]].

    ``coeffs[i]`` lists polynomial coefficients in ascending powers.
    """

    breaks: tuple
    coeffs: tuple

    def __post_init__(self):
        if len(self.coeffs) != len(self.breaks) + 1:
            raise PolicyError("need one more polynomial piece than breakpoints")
        if list(self.breaks) != sorted(self.breaks):
            raise PolicyError("activation breakpoints must be increasing")

    @property
    def pieces(self) -> int:
        return len(self.coeffs)

    @property
    def degree(self) -> int:
        deg = 0
        for cs in self.coeffs:
            nz = [i for i, v in enumerate(cs) if v != 0]
            deg = max(deg, nz[-1] if nz else 0)
        return deg

    def piece_index(self, z: np.ndarray) -> np.ndarray:
        return np.searchsorted(np.asarray(self.breaks, float), z, side="left")

    def __call__(self, z: np.ndarray) -> np.ndarray:
        idx = self.piece_index(z)
        out = np.zeros_like(z, dtype=float)
        for i, cs in enumerate(self.coeffs):
            mask = idx == i
            if np.any(mask):
                out[mask] = np.polynomial.polynomial.polyval(z[mask], cs)
        return out


RELU = PiecewisePolynomial(breaks=(0.0,), coeffs=((0.0,), (0.0, 1.0)))
ACTIVATIONS = {"relu": RELU}


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple  # (input, hidden_1, ..., hidden_L, 1)
    activation: PiecewisePolynomial = RELU
    activation_name: str = "relu"

    def __post_init__(self):
        widths = tuple(int(v) for v in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 3 or widths[-1] != 1 or min(widths) < 1:
            raise PolicyError(f"MLP widths must be (d, h_1..h_L, 1) with L >= 1, got {widths}")

    @property
    def L(self) -> int:
        return len(self.widths) - 2

    @property
    def U(self) -> int:
        return sum(self.widths[1:-1])

    @property
    def W(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))

    @property
    def p(self) -> int:
        return self.activation.pieces

    @property
    def alpha(self) -> int:
        return self.activation.degree

    def unpack(self, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        w = np.asarray(w, float)
        if len(w) != self.W:
            raise PolicyError(f"expected {self.W} MLP parameters, got {len(w)}")
        layers, pos = [], 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            Wm = w[pos : pos + a * b].reshape(b, a)
            pos += a * b
            bias = w[pos : pos + b]
            pos += b
            layers.append((Wm, bias))
        return layers


@dataclass(frozen=True, eq=False)
class MlpScorer:
    spec: MlpSpec
    w: np.ndarray

    kind = "mlp"

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        if len(w) != self.spec.W:
            raise PolicyError(f"expected {self.spec.W} MLP parameters, got {len(w)}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "_layers", self.spec.unpack(w))

    @property
    def n_params(self) -> int:
        return self.spec.W

    @property
    def input_dim(self) -> int:
        return self.spec.widths[0]

    def preactivations(self, phi: np.ndarray) -> list[np.ndarray]:
        h = np.asarray(phi, float)
        pre = []
        for Wm, bias in self._layers[:-1]:
            z = h @ Wm.T + bias
            pre.append(z)
            h = self.spec.activation(z)
        return pre

    def score_batch(self, phi: np.ndarray) -> np.ndarray:
        h = np.asarray(phi, float)
        if h.ndim != 2 or h.shape[1] != self.input_dim:
            raise PolicyError(f"feature width {h.shape[-1]} does not match MLP input {self.input_dim}")
        for Wm, bias in self._layers[:-1]:
            h = self.spec.activation(h @ Wm.T + bias)
        Wm, bias = self._layers[-1]
        return (h @ Wm.T + bias)[:, 0]

    def score_params(self, P: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """Scores for a batch of parameter vectors: (T, W) x (c, d) -> (T, c)."""
        P = np.atleast_2d(np.asarray(P, float))
        T = P.shape[0]
        h = np.broadcast_to(np.asarray(phi, float), (T, *np.shape(phi)))
        widths, pos = self.spec.widths, 0
        for layer, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            Wm = P[:, pos : pos + a * b].reshape(T, b, a)
            pos += a * b
            bias = P[:, pos : pos + b]
            pos += b
            h = np.einsum("tca,tba->tcb", h, Wm) + bias[:, None, :]
            if layer < len(widths) - 2:
                h = self.spec.activation(h)
        return h[:, :, 0]

    def with_params(self, w) -> "MlpScorer":
        return MlpScorer(self.spec, w)


FIXED_RULES = ("dfs", "bfs", "product", "efficacy")


@dataclass(frozen=True)
class FixedRule:
    """Parameter-free scoring rules used for the non-learned action types.

    ``dfs``      node with the newest creation index (feature 3 of node4)
    ``bfs``      node with the smallest LP estimate
    ``product``  max(f |c_j|, eps) * max((1 - f) |c_j|, eps) on branch4 features
    ``efficacy`` cut efficacy
    """

    rule: str

    kind = "fixed"
    n_params = 0
    input_dim = 4
    w = np.zeros(0)

    def __post_init__(self):
        if self.rule not in FIXED_RULES:
            raise PolicyError(f"unknown fixed rule {self.rule!r}")

    def score_batch(self, phi: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi, float)
        if self.rule == "dfs":
            return phi[:, 3].copy()
        if self.rule == "bfs":
            return -phi[:, 0]
        if self.rule == "product":
            f, cn = phi[:, 3], phi[:, 1]
            return np.maximum(f * cn, 1e-6) * np.maximum((1.0 - f) * cn, 1e-6)
        return phi[:, 0].copy()

    def with_params(self, w) -> "FixedRule":
        if len(np.asarray(w).ravel()):
            raise PolicyError("fixed rules take no parameters")
        return self


def score(scorer, phi) -> float:
    return float(scorer.score_batch(np.atleast_2d(np.asarray(phi, float)))[0])


def select_action(scores: Sequence[float]) -> int | None:
    """Smallest index among the maximisers; ``None`` (skip) for an empty list."""
    scores = np.asarray(scores, float)
    if scores.size == 0:
        return None
    return int(np.argmax(scores))


# ---------------------------------------------------------------------------
# bundles


@dataclass(frozen=True)
class PolicyEntry:
    extractor: str
    scorer: object
    learnable: bool = False

    def __post_init__(self):
        if self.extractor not in EXTRACTORS:
            raise PolicyError(f"unknown feature extractor {self.extractor!r}")
        if self.scorer.input_dim != EXTRACTORS[self.extractor]:
            raise PolicyError(
                f"scorer input {self.scorer.input_dim} != extractor width {EXTRACTORS[self.extractor]}"
            )


@dataclass(frozen=True)
class PolicyBundle:
    entries: dict = field(default_factory=dict)  # action type -> PolicyEntry

    def __getitem__(self, k: int) -> PolicyEntry:
        return self.entries[k]

    @property
    def learnable_types(self) -> list[int]:
        return [k for k in sorted(self.entries) if self.entries[k].learnable]

    @property
    def n_params(self) -> int:
        return sum(self.entries[k].scorer.n_params for k in self.learnable_types)

    def params(self) -> np.ndarray:
        parts = [self.entries[k].scorer.w for k in self.learnable_types]
        return np.concatenate(parts) if parts else np.zeros(0)

    def with_params(self, w) -> "PolicyBundle":
        """Copy with the learnable scorers' parameters replaced (concatenated in type order)."""
        w = np.asarray(w, float).ravel()
        if len(w) != self.n_params:
            raise PolicyError(f"expected {self.n_params} parameters, got {len(w)}")
        entries, pos = dict(self.entries), 0
        for k in self.learnable_types:
            e = entries[k]
            size = e.scorer.n_params
            entries[k] = PolicyEntry(e.extractor, e.scorer.with_params(w[pos : pos + size]), True)
            pos += size
        return PolicyBundle(entries)


def default_bundle() -> PolicyBundle:
    return PolicyBundle({
        NODE: PolicyEntry("node4", FixedRule("dfs")),
        CUT: PolicyEntry("cut4", FixedRule("efficacy")),
        BRANCH: PolicyEntry("branch4", FixedRule("product")),
    })


def make_scorer(kind: str, *, hidden=(4,), w=None, rule=None, activation="relu", input_dim=4):
    if kind == "linear":
        return LinearScorer(np.zeros(input_dim) if w is None else w)
    if kind == "mlp":
        if activation not in ACTIVATIONS:
            raise PolicyError(f"unknown activation preset {activation!r}")
        spec = MlpSpec((input_dim, *hidden, 1), ACTIVATIONS[activation], activation)
        return MlpScorer(spec, np.zeros(spec.W) if w is None else w)
    if kind == "fixed":
        return FixedRule(rule)
    raise PolicyError(f"unknown scorer kind {kind!r}")


def scenario_bundle(scenario: str, scorer: str = "linear", hidden=(4,)) -> PolicyBundle:
    """Presets: ``root-cuts`` learns cut selection only; ``three-policy`` learns all three."""
    if scenario == "root-cuts":
        return PolicyBundle({
            NODE: PolicyEntry("node4", FixedRule("dfs")),
            CUT: PolicyEntry("cut4", make_scorer(scorer, hidden=hidden), True),
            BRANCH: PolicyEntry("branch4", FixedRule("product")),
        })
    if scenario == "three-policy":
        return PolicyBundle({
            k: PolicyEntry(DEFAULT_EXTRACTOR[k], make_scorer(scorer, hidden=hidden), True)
            for k in (NODE, CUT, BRANCH)
        })
    raise PolicyError(f"unknown scenario {scenario!r}")


# ---------------------------------------------------------------------------
# policy file format


def policy_to_dict(bundle: PolicyBundle) -> dict:
    out = {"schema": POLICY_SCHEMA}
    for k in sorted(bundle.entries):
        e = bundle.entries[k]
        s = e.scorer
        rec = {"extractor": e.extractor, "scorer": s.kind, "learnable": e.learnable}
        if s.kind == "fixed":
            rec["rule"] = s.rule
        else:
            if s.kind == "mlp":
                rec["widths"] = list(s.spec.widths)
                rec["activation"] = s.spec.activation_name
            rec["w"] = [float(v) for v in s.w]
        out[ACTION_NAMES[k]] = rec
    return out


def policy_from_dict(data: dict) -> PolicyBundle:
    if data.get("schema") != POLICY_SCHEMA:
        raise PolicyError(f"unsupported policy schema {data.get('schema')!r}")
    entries = {}
    for k, name in ACTION_NAMES.items():
        rec = data.get(name)
        if rec is None:
            continue
        kind = rec["scorer"]
        if kind == "fixed":
            scorer = FixedRule(rec["rule"])
        elif kind == "linear":
            scorer = LinearScorer(rec["w"])
        elif kind == "mlp":
            act = rec.get("activation", "relu")
            if act not in ACTIVATIONS:
                raise PolicyError(f"unknown activation preset {act!r}")
            scorer = MlpScorer(MlpSpec(tuple(rec["widths"]), ACTIVATIONS[act], act), rec["w"])
        else:
            raise PolicyError(f"unknown scorer kind {kind!r}")
        entries[k] = PolicyEntry(rec["extractor"], scorer, bool(rec.get("learnable", False)))
    missing = [ACTION_NAMES[k] for k in ACTION_NAMES if k not in entries]
    if missing:
        raise PolicyError(f"policy file lacks entries for {missing}")
    return PolicyBundle(entries)


def load_policy(path) -> PolicyBundle:
    with open(path, encoding="utf-8") as fh:
        return policy_from_dict(json.load(fh))


def save_policy(bundle: PolicyBundle, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(policy_to_dict(bundle), fh, indent=2)
        fh.write("\n")
