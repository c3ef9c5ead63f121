"""M5-style model trees: growth by standard-deviation reduction, linear
models at every node, error-compensated pruning and leaf-to-root smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, TableEncoder

RIDGE = 1e-8
ERROR_CAP = 10.0


@dataclass(frozen=True)
class TreeParams:
    """The tuned hyperparameter quadruple.

    min_cases: minimum training rows each side of a split must keep.
    prune: whether to prune the grown tree.
    smoothing: leaf-to-root blending coefficient (0 disables smoothing).
    split_threshold: a node whose target deviation has fallen to this
        fraction of the full training set's deviation becomes a leaf.
    """

    min_cases: int = 4
    prune: bool = True
    smoothing: float = 15.0
    split_threshold: float = 0.05

    def __post_init__(self):
        if self.min_cases < 2:
            raise ValueError(f"min_cases must be >= 2, got {self.min_cases}")
        if self.smoothing < 0:
            raise ValueError(f"smoothing must be >= 0, got {self.smoothing}")
        if not 0 < self.split_threshold <= 1:
            raise ValueError(
                f"split_threshold must be in (0, 1], got {self.split_threshold}"
            )


@dataclass(frozen=True)
class LinearModel:
    """Least-squares model over a subset of the numeric features."""

    names: tuple[str, ...]
    feature_indices: np.ndarray
    weights: np.ndarray
    intercept: float
    training_rmse: float
    training_mae: float
    n_train: int

    @property
    def coefficients(self) -> dict[str, float]:
        return {n: float(w) for n, w in zip(self.names, self.weights)}

    def predict_matrix(self, x_num: np.ndarray) -> np.ndarray:
        if len(self.feature_indices) == 0:
            return np.full(len(x_num), self.intercept)
        return x_num[:, self.feature_indices] @ self.weights + self.intercept


@dataclass
class Node:
    model: LinearModel
    count: int
    # split fields; feature is None on leaves
    feature: str | None = None
    kind: str = ""  # "numeric" | "categorical"
    column: int = -1
    threshold: float = 0.0
    left_codes: frozenset = field(default_factory=frozenset)
    right_codes: frozenset = field(default_factory=frozenset)
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass(frozen=True)
class ModelTree:
    root: Node
    global_sd: float
    params: TreeParams
    encoder: TableEncoder
    n_train: int

    def predict(self, record: dict) -> float:
        x_num, x_cat = self.encoder.encode_record(record)
        return float(
            _predict_nodes(self.root, x_num[None, :], x_cat[None, :], self.params.smoothing)[0]
        )

    def predict_dataset(self, d: Dataset) -> np.ndarray:
        x_num, x_cat = self.encoder.encode(d)
        return _predict_nodes(self.root, x_num, x_cat, self.params.smoothing)

    def iter_nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.extend([node.right, node.left])

    @property
    def n_leaves(self) -> int:
        return sum(1 for n in self.iter_nodes() if n.is_leaf)

    @property
    def depth(self) -> int:
        def d(node):
            return 0 if node.is_leaf else 1 + max(d(node.left), d(node.right))

        return d(self.root)

    def pretty(self) -> str:
        lines: list[str] = []
        counter = [0]

        def walk(node: Node, indent: int):
            pad = "|   " * indent
            if node.is_leaf:
                counter[0] += 1
                lines.append(f"{pad}LM {counter[0]}: y = {_format_model(node.model)}")
                return
            if node.kind == "numeric":
                lines.append(f"{pad}{node.feature} <= {node.threshold:.6g}")
            else:
                codes = self.encoder.level_codes[node.feature]
                inside = [lv for lv, c in sorted(codes.items()) if c in node.left_codes]
                lines.append(f"{pad}{node.feature} in {{{', '.join(inside)}}}")
            walk(node.left, indent + 1)
            walk(node.right, indent + 1)

        walk(self.root, 0)
        return "\n".join(lines) + "\n"


def _format_model(m: LinearModel) -> str:
    parts = [f"{m.intercept:.6g}"]
    for name, w in zip(m.names, m.weights):
        sign = "+" if w >= 0 else "-"
        parts.append(f"{sign} {abs(w):.6g}*{name}")
    return " ".join(parts)


def _pop_sd(y: np.ndarray) -> float:
    return float(np.sqrt(np.maximum(np.mean((y - y.mean()) ** 2), 0.0)))


def sdr_split_score(targets, left_indices) -> float:
    """sd(all) - weighted sd(left, right), population standard deviations."""
    y = np.asarray(targets, dtype=float)
    left = np.zeros(len(y), dtype=bool)
    left[list(left_indices)] = True
    yl, yr = y[left], y[~left]
    if len(yl) == 0 or len(yr) == 0:
        raise ValueError("both split sides must be non-empty")
    return _pop_sd(y) - (len(yl) * _pop_sd(yl) + len(yr) * _pop_sd(yr)) / len(y)


def order_categorical_levels(level_of_row, targets) -> list:
    """Levels sorted ascending by mean target (ties by level value).

    The candidate categorical splits are the len-1 prefix/suffix
    partitions of this ordering.
    """
    levels = list(level_of_row)
    if not levels:
        raise ValueError("at least one level required")
    y = np.asarray(targets, dtype=float)
    uniq = sorted(set(levels))
    means = {lv: y[[i for i, l in enumerate(levels) if l == lv]].mean() for lv in uniq}
    return sorted(uniq, key=lambda lv: (means[lv], lv))


def _comp_factor(n: int, v: int, cap: float = ERROR_CAP) -> float:
    """M5 'true error' compensation (n+v)/(n-v), capped for tiny nodes."""
    if n <= v:
        return cap
    return min((n + v) / (n - v), cap)


def fit_linear_model(
    x_num: np.ndarray,
    y: np.ndarray,
    names: tuple[str, ...],
    select_features: bool = True,
    cap: float = ERROR_CAP,
) -> LinearModel:
    """Ridge-damped least squares with greedy attribute dropping.

    Features are removed one at a time, each round discarding the one
    whose removal most lowers the compensated error estimate
    mae * (n+v)/(n-v); removal is accepted on ties so degenerate fits
    collapse toward the mean-only model.

    Dropping a feature is the ridge solution constrained to a zero
    coefficient, obtained from the inverse normal matrix by a rank-one
    downdate, so each round costs one m-by-k product instead of k solves.
    """
    y = np.asarray(y, dtype=float)
    m, nf = x_num.shape
    if nf == 0 or m == 0:
        return _mean_model(y, m)
    a = np.empty((m, nf + 1))
    a[:, :nf] = x_num
    a[:, nf] = 1.0
    gram = a.T @ a + RIDGE * np.eye(nf + 1)
    rhs = a.T @ y
    try:
        h = np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        h = np.linalg.pinv(gram)
    w = h @ rhs
    a_cur = a
    current = list(range(nf))
    resid = y - a_cur @ w
    est = float(np.abs(resid).mean()) * _comp_factor(m, len(current) + 1, cap)

    while select_features and current:
        k = len(current)
        d = np.diag(h)[:k]
        # column j: full solution with coefficient j forced to zero
        cand_w = w[:, None] - h[:, :k] * (w[:k] / d)[None, :]
        cand_resid = y[:, None] - a_cur @ cand_w
        maes = np.abs(cand_resid).mean(axis=0)
        factor = _comp_factor(m, k, cap)  # every candidate keeps k-1 features
        j = int(np.argmin(maes))
        if maes[j] * factor > est:
            break
        est = float(maes[j]) * factor
        resid = cand_resid[:, j]
        # downdate the inverse and drop column j everywhere
        hj = h[:, j]
        h = np.delete(np.delete(h - np.outer(hj, hj) / hj[j], j, axis=0), j, axis=1)
        w = np.delete(cand_w[:, j], j)
        a_cur = np.delete(a_cur, j, axis=1)
        current.pop(j)

    if not current:
        return _mean_model(y, m)
    mae = float(np.abs(resid).mean())
    rmse = float(np.sqrt(np.mean(resid**2)))
    return LinearModel(
        names=tuple(names[j] for j in current),
        feature_indices=np.asarray(current, dtype=np.intp),
        weights=np.asarray(w[:-1], dtype=float),
        intercept=float(w[-1]),
        training_rmse=rmse,
        training_mae=mae,
        n_train=m,
    )


def _mean_model(y: np.ndarray, m: int) -> LinearModel:
    mean = float(y.mean()) if m else 0.0
    resid = y - mean
    return LinearModel(
        names=(),
        feature_indices=np.empty(0, dtype=np.intp),
        weights=np.empty(0),
        intercept=mean,
        training_rmse=float(np.sqrt(np.mean(resid**2))) if m else 0.0,
        training_mae=float(np.abs(resid).mean()) if m else 0.0,
        n_train=m,
    )


def _scan_numeric(vals, y, min_cases, sd_node):
    """Best midpoint split of one numeric column; returns (sdr, threshold) or None."""
    m = len(y)
    if m < 2 * min_cases:
        return None
    order = np.argsort(vals, kind="stable")
    v = vals[order]
    ys = y[order]
    cum = np.cumsum(ys)
    cum2 = np.cumsum(ys**2)
    cuts = np.arange(min_cases - 1, m - min_cases)
    if len(cuts) == 0:
        return None
    valid = v[cuts] != v[cuts + 1]
    if not valid.any():
        return None
    cuts = cuts[valid]
    nl = cuts + 1.0
    nr = m - nl
    sd_l = np.sqrt(np.maximum(cum2[cuts] / nl - (cum[cuts] / nl) ** 2, 0.0))
    sd_r = np.sqrt(np.maximum((cum2[-1] - cum2[cuts]) / nr - ((cum[-1] - cum[cuts]) / nr) ** 2, 0.0))
    sdr = sd_node - (nl * sd_l + nr * sd_r) / m
    best = int(np.argmax(sdr))  # first max: lowest threshold wins ties
    i = cuts[best]
    return float(sdr[best]), float((v[i] + v[i + 1]) / 2.0)


def _scan_categorical(codes, y, min_cases, sd_node):
    """Best prefix split over mean-ordered levels; returns (sdr, left_codes, right_codes)."""
    m = len(y)
    if m < 2 * min_cases:
        return None
    lv, inv = np.unique(codes, return_inverse=True)
    if len(lv) < 2:
        return None
    cnt = np.bincount(inv).astype(float)
    sy = np.bincount(inv, weights=y)
    sy2 = np.bincount(inv, weights=y**2)
    order = np.lexsort((lv, sy / cnt))  # mean target asc, code breaks ties
    cnl = np.cumsum(cnt[order])
    cyl = np.cumsum(sy[order])
    cyl2 = np.cumsum(sy2[order])
    prefixes = np.arange(1, len(lv))
    nl = cnl[prefixes - 1]
    nr = m - nl
    valid = (nl >= min_cases) & (nr >= min_cases)
    if not valid.any():
        return None
    prefixes = prefixes[valid]
    nl, nr = nl[valid], nr[valid]
    sl, sl2 = cyl[prefixes - 1], cyl2[prefixes - 1]
    sd_l = np.sqrt(np.maximum(sl2 / nl - (sl / nl) ** 2, 0.0))
    sd_r = np.sqrt(np.maximum((cyl2[-1] - sl2) / nr - ((cyl[-1] - sl) / nr) ** 2, 0.0))
    sdr = sd_node - (nl * sd_l + nr * sd_r) / m
    best = int(np.argmax(sdr))  # first max: shortest prefix wins ties
    j = prefixes[best]
    left = frozenset(int(c) for c in lv[order[:j]])
    right = frozenset(int(c) for c in lv[order[j:]])
    return float(sdr[best]), left, right


@dataclass(frozen=True)
class _FeatureView:
    """Feature slots in schema order, each pointing into its matrix."""

    name: str
    kind: str
    column: int


def _feature_views(encoder: TableEncoder) -> list[_FeatureView]:
    num_pos = {n: j for j, n in enumerate(encoder.numeric_names)}
    cat_pos = {n: j for j, n in enumerate(encoder.categorical_names)}
    views = []
    for name in encoder.feature_names:
        if name in num_pos:
            views.append(_FeatureView(name, "numeric", num_pos[name]))
        else:
            views.append(_FeatureView(name, "categorical", cat_pos[name]))
    return views


def build_tree(train: Dataset, params: TreeParams) -> ModelTree:
    """Grow (and optionally prune) a model tree on a dataset."""
    encoder = TableEncoder(train)
    x_num, x_cat = encoder.encode(train)
    return build_tree_encoded(x_num, x_cat, train.effort, params, encoder)


def build_tree_encoded(
    x_num: np.ndarray,
    x_cat: np.ndarray,
    y: np.ndarray,
    params: TreeParams,
    encoder: TableEncoder,
) -> ModelTree:
    """build_tree on matrices already produced by a TableEncoder.

    Lets a tuning loop encode each training fold once and rebuild trees
    cheaply for every candidate parameter vector.
    """
    root, global_sd = _grow_tree(x_num, x_cat, y, params, encoder)
    tree = ModelTree(root, global_sd, params, encoder, len(y))
    if params.prune:
        tree = prune_tree(tree)
    return tree


def _grow_tree(x_num, x_cat, y, params: TreeParams, encoder: TableEncoder):
    views = _feature_views(encoder)
    names = encoder.numeric_names
    global_sd = _pop_sd(y)

    def grow(idx: np.ndarray) -> Node:
        y_node = y[idx]
        xn_node = x_num[idx]
        model = fit_linear_model(xn_node, y_node, names)
        node = Node(model=model, count=len(idx))
        sd_node = _pop_sd(y_node)
        if sd_node <= params.split_threshold * global_sd:
            return node
        best = None  # (sdr, view position, payload)
        for pos, view in enumerate(views):
            if view.kind == "numeric":
                hit = _scan_numeric(xn_node[:, view.column], y_node, params.min_cases, sd_node)
                if hit is not None and (best is None or hit[0] > best[0]):
                    best = (hit[0], pos, ("numeric", hit[1]))
            else:
                hit = _scan_categorical(
                    x_cat[idx, view.column], y_node, params.min_cases, sd_node
                )
                if hit is not None and (best is None or hit[0] > best[0]):
                    best = (hit[0], pos, ("categorical", hit[1], hit[2]))
        if best is None:
            return node
        _, pos, payload = best
        view = views[pos]
        if payload[0] == "numeric":
            mask = x_num[idx, view.column] <= payload[1]
            node.threshold = payload[1]
        else:
            codes = x_cat[idx, view.column]
            mask = np.isin(codes, list(payload[1]))
            node.left_codes, node.right_codes = payload[1], payload[2]
        node.feature = view.name
        node.kind = view.kind
        node.column = view.column
        node.left = grow(idx[mask])
        node.right = grow(idx[~mask])
        return node

    return grow(np.arange(len(y), dtype=np.intp)), global_sd


def _model_estimate(node: Node, cap: float = ERROR_CAP) -> float:
    v = len(node.model.feature_indices) + 1
    return node.model.training_mae * _comp_factor(node.count, v, cap)


def prune_tree(tree: ModelTree) -> ModelTree:
    """Bottom-up pruning against the compensated error estimate.

    An inner node whose own model estimate does not exceed the
    coverage-weighted estimate of its subtree is collapsed to a leaf.
    Returns a new tree; the input is left untouched.
    """

    def visit(node: Node) -> tuple[Node, float]:
        if node.is_leaf:
            return node, _model_estimate(node)
        left, err_l = visit(node.left)
        right, err_r = visit(node.right)
        subtree_err = (left.count * err_l + right.count * err_r) / node.count
        own = _model_estimate(node)
        if own <= subtree_err:
            return Node(model=node.model, count=node.count), own
        pruned = Node(
            model=node.model,
            count=node.count,
            feature=node.feature,
            kind=node.kind,
            column=node.column,
            threshold=node.threshold,
            left_codes=node.left_codes,
            right_codes=node.right_codes,
            left=left,
            right=right,
        )
        return pruned, subtree_err

    root, _ = visit(tree.root)
    return ModelTree(root, tree.global_sd, tree.params, tree.encoder, tree.n_train)


def _predict_nodes(root: Node, x_num: np.ndarray, x_cat: np.ndarray, smoothing: float) -> np.ndarray:
    """Route every row to a leaf, then blend outputs back up the path."""

    def rec(node: Node, rows: np.ndarray) -> np.ndarray:
        if node.is_leaf:
            return node.model.predict_matrix(x_num[rows])
        if node.kind == "numeric":
            go_left = x_num[rows, node.column] <= node.threshold
        else:
            codes = x_cat[rows, node.column]
            in_left = np.isin(codes, list(node.left_codes))
            in_right = np.isin(codes, list(node.right_codes))
            unseen_left = node.left.count >= node.right.count
            go_left = in_left | (~in_right & unseen_left)
        out = np.empty(len(rows))
        for child, side in ((node.left, go_left), (node.right, ~go_left)):
            if side.any():
                vals = rec(child, rows[side])
                if smoothing > 0:
                    q = node.model.predict_matrix(x_num[rows[side]])
                    vals = (child.count * vals + smoothing * q) / (child.count + smoothing)
                out[side] = vals
        return out

    return rec(root, np.arange(len(x_num), dtype=np.intp))


def predict(tree: ModelTree, record: dict) -> float:
    """Prediction for one schema-conforming record (unseen levels permitted)."""
    return tree.predict(record)
