"""End-to-end joint training, cross-validation, ablations and sweeps.

One epoch is one full-batch optimiser step:

1. compress each modality and concatenate into ``x`` (N, C);
2. (every ``refresh_every`` epochs) score feature influence, pick activated
   sets and build the activation graphs;
3. encode all N*M graphs, read out, fuse with ``x`` into ``F`` (N, 32M + C);
4. link patients by cosine k-NN over ``F`` and run the GCN + MLP head;
5. combine the classification, representation and discriminator losses.

Test patients stay in the cohort graph as unlabelled nodes; only training
rows contribute to the classification loss.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import compression, inter, intra, magcs, mdfd
from . import tensor as T
from .config import TrainConfig
from .errors import ConfigError, ContractError, StratificationError, TrainingDivergenceError
from .metrics import MetricReport, compute_metrics

log = logging.getLogger(__name__)

NODE_INPUT_DIM = 2


@dataclass
class Model:
    config: TrainConfig
    specs: list
    params: T.ParameterSet
    disc: mdfd.Discriminator | None
    encoder: intra.PlanarEncoder
    clf: inter.GcnClassifier
    classes: int

    @property
    def C(self):
        return sum(s.latent_dim for s in self.specs)

    @property
    def planes(self):
        return 1 if self.config.disable_magcs else self.config.M


def modality_specs(dataset, config):
    return [compression.ModalitySpec(n, d, min(d, config.latent_dim)) for n, d in dataset.modalities]


def build_model(specs, classes, config, rng):
    params = T.ParameterSet()
    for spec in specs:
        compression.init_modality(spec, params, rng)
    C = sum(s.latent_dim for s in specs)
    disc = None
    if not config.disable_mdfd:
        disc = mdfd.create_discriminator(C, config.M, rng, params, activation=config.sd_activation)
    planes = 1 if config.disable_magcs else config.M
    encoder = intra.create_encoder(
        params, rng, NODE_INPUT_DIM, (intra.EMBED_DIM,) * config.gat_layers, planes,
        config.per_plane_encoders, config.activation, config.leaky_slope,
    )
    clf = inter.create_classifier(
        params, rng, intra.EMBED_DIM * planes + C, classes,
        (config.gcn_hidden,) * config.gcn_layers, config.head_hidden, config.activation,
        use_gcn=not config.disable_hfdan,
    )
    return Model(config, specs, params, disc, encoder, clf, classes)


# ---------------------------------------------------------------- forward pass


@dataclass
class StageOne:
    """Non-differentiable topology for one set of patients."""

    scores: np.ndarray  # (n, G, C)
    activated: np.ndarray  # (n, G, n_act)
    batch: intra.GraphBatch


def stage_one(model, X):
    """Influence scores, activated sets and activation graphs for rows of ``X``."""
    cfg = model.config
    n, C = X.shape
    if cfg.disable_mdfd:
        scores = np.ones((n, cfg.M, C))
    else:
        scores = mdfd.influence_scores_batch(X, model.disc, cfg.method)
    if cfg.disable_magcs:
        scores = scores.mean(axis=1, keepdims=True)
        activated = mdfd.select_activated(scores, cfg.paf).indices
        edges = magcs.complete_edges(activated, scores)
    else:
        activated = mdfd.select_activated(scores, cfg.paf).indices
        edges = magcs.knn_edges(X, activated, scores, cfg.k)
    G = scores.shape[1]
    batch = intra.make_graph_batch(*edges, n * G, C)
    return StageOne(scores, activated, batch)


@dataclass
class ForwardResult:
    logits: T.Tensor
    x: T.Tensor
    F: T.Tensor
    stage: StageOne
    l_cls: T.Tensor | None
    l_rep: T.Tensor
    l_sd: T.Tensor
    total: T.Tensor | None
    trace: list = field(default_factory=list)
    cohort_adjacency: np.ndarray | None = None


def compress(model, raw):
    acts = model.config.ae_activation
    latents = [compression.encode_modality(r, s, model.params, acts) for r, s in zip(raw, model.specs)]
    x = compression.assemble_patient_vector(latents, model.specs)
    recon = [
        T.mse(compression.decode_modality(z, s, model.params, acts), T.Tensor(r))
        for z, r, s in zip(latents, raw, model.specs)
    ]
    l_ae = recon[0]
    for term in recon[1:]:
        l_ae = l_ae + term
    return x, T.scale(l_ae, 1.0 / len(recon))


def node_features(x, scores):
    """``[x_i, C_m(i)]`` for every node of every plane, patient-major."""
    n, G, C = scores.shape
    idx = (np.arange(n)[:, None, None] * C + np.arange(C)[None, None, :]).repeat(G, axis=1)
    xcol = T.take_rows(T.reshape(x, (n * C, 1)), idx.reshape(-1))
    return T.concat([xcol, T.Tensor(scores.reshape(-1, 1))], axis=1)


def total_loss(l_cls, l_rep, l_sd, config):
    """Weighted sum of the classification, representation and discriminator losses."""
    if isinstance(config, TrainConfig):
        lams = (config.lambda_cls, config.lambda_rep, config.lambda_sd)
    else:
        lams = tuple(config)
    if any(lam < 0 for lam in lams):
        raise ConfigError(f"loss weights must be non-negative, got {lams}")
    return T.scale(l_cls, lams[0]) + T.scale(l_rep, lams[1]) + T.scale(l_sd, lams[2])


def forward(model, raw, labels=None, train_rows=None, stage=None):
    cfg = model.config
    trace = ["compress"]
    x, l_ae = compress(model, raw)
    l_sd = l_ae
    if model.disc is not None:
        trace.append("discriminator")
        l_sd = l_sd + mdfd.sd_loss(x, model.disc, cfg.lambda_l1, cfg.lambda_l2, cfg.lambda_orth)
    if stage is None:
        stage = stage_one(model, x.data)
    trace.append("activation_graphs")
    n, G, C = stage.scores.shape
    H0 = node_features(x, stage.scores)
    HL = intra.encode(H0, stage.batch, model.encoder)
    trace.append("planar_encoders")
    l_rep = intra.rep_loss(H0, HL, model.encoder)
    emb = intra.readout(HL, stage.batch)
    F = intra.fuse_patient(emb, x, G)
    adjacency = None
    if cfg.disable_hfdan:
        H = F
    else:
        adjacency = inter.cosine_knn_adjacency(F.data, cfg.k_global)
        trace.append("cohort_graph")
        H = inter.propagate_cohort(F, inter.normalize_adjacency(adjacency), model.clf)
    logits = inter.classify(H, model.clf)
    trace.append("classify")
    l_cls = total = None
    if labels is not None and train_rows is not None and len(train_rows):
        l_cls = inter.cls_loss(labels, logits, train_rows)
        total = total_loss(l_cls, l_rep, l_sd, cfg)
    return ForwardResult(logits, x, F, stage, l_cls, l_rep, l_sd, total, trace, adjacency)


# ---------------------------------------------------------------- training


@dataclass
class FoldResult:
    model: Model
    history: list
    train_idx: np.ndarray
    test_idx: np.ndarray
    probabilities: np.ndarray  # (len(test_idx), classes)
    normalizers: list


def _normalise(dataset, train_idx):
    zs = [compression.ZScore.fit(r, train_idx) for r in dataset.raw]
    return zs, [z.apply(r) for z, r in zip(zs, dataset.raw)]


def fold_rng(seed, fold):
    return np.random.default_rng([int(seed), int(fold)])


def train_fold(dataset, split, config, fold=0, callback=None):
    """Train one model on ``split = (train_idx, test_idx)`` and score the test rows."""
    train_idx, test_idx = (np.asarray(s, dtype=np.int64) for s in split)
    if np.intersect1d(train_idx, test_idx).size:
        raise ContractError("train and test indices overlap")
    rng = fold_rng(config.seed, fold)
    specs = modality_specs(dataset, config)
    model = build_model(specs, dataset.classes, config, rng)
    zs, raw = _normalise(dataset, train_idx)
    labels = dataset.labels
    if config.attach_at_eval:
        rows = train_idx
        sub_raw = [r[rows] for r in raw]
        sub_labels, sup = labels[rows], np.arange(rows.size)
    else:
        sub_raw, sub_labels, sup = raw, labels, train_idx

    history, stage = [], None
    for epoch in range(config.epochs):
        if epoch % config.refresh_every == 0:
            stage = None
        model.params.zero_grad()
        res = forward(model, sub_raw, sub_labels, sup, stage)
        stage = res.stage
        value = res.total.item()
        if not math.isfinite(value):
            raise TrainingDivergenceError("non-finite training loss", epoch=epoch)
        T.backward(res.total)
        try:
            T.adam_step(model.params, config.lr, (config.beta1, config.beta2), config.eps)
        except TrainingDivergenceError as exc:
            raise TrainingDivergenceError(str(exc), epoch=epoch) from None
        rec = {
            "epoch": epoch,
            "L_cls": res.l_cls.item(),
            "L_rep": res.l_rep.item(),
            "L_sd": res.l_sd.item(),
            "L": value,
        }
        history.append(rec)
        if callback is not None:
            callback(rec)
    model.params.zero_grad()
    with T.no_grad():
        res = forward(model, raw)
    probs = inter.predict_proba(res.logits)[test_idx]
    return FoldResult(model, history, train_idx, test_idx, probs, zs)


def stratified_folds(labels, folds, seed):
    """Seeded, class-stratified assignment; returns one test-index array per fold."""
    labels = np.asarray(labels)
    n = labels.size
    if folds < 2 or folds > n:
        raise StratificationError(f"cannot split {n} patients into {folds} folds")
    rng = np.random.default_rng(seed)
    assign = np.empty(n, dtype=np.int64)
    offset = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < folds and folds < n:
            raise StratificationError(
                f"class {int(cls)} has {members.size} patients; every one of {folds} folds needs one"
            )
        members = members[rng.permutation(members.size)]
        assign[members] = (np.arange(members.size) + offset) % folds
        offset += members.size
    out = [np.flatnonzero(assign == f) for f in range(folds)]
    if any(f.size == 0 for f in out):
        raise StratificationError("a fold received no patients")
    return out


def _run_fold(args):
    dataset, train_idx, test_idx, config, fold = args
    return train_fold(dataset, (train_idx, test_idx), config, fold)


def kfold_evaluate(dataset, config, folds=None, jobs=1):
    """Stratified k-fold cross-validation with transductive evaluation."""
    folds = config.folds if folds is None else folds
    if dataset.classes != 2:
        raise ContractError("metric reports are defined for binary labels only")
    tests = stratified_folds(dataset.labels, folds, config.seed)
    every = np.arange(len(dataset))
    jobs_args = [
        (dataset, np.setdiff1d(every, test), test, config, f) for f, test in enumerate(tests)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, jobs_args))
    else:
        results = []
        for f, args in enumerate(jobs_args):
            results.append(_run_fold(args))
            log.info("fold %d/%d done", f + 1, folds)
    report = MetricReport()
    for res in results:
        y = dataset.labels[res.test_idx]
        report.folds.append(
            compute_metrics(y, res.probabilities[:, 1], config.threshold, allow_single_class=True)
        )
    report.histories = [r.history for r in results]
    report.fold_results = results
    return report


# ---------------------------------------------------------------- studies

ABLATIONS = {
    "full": {},
    "w/o MDFD": {"disable_mdfd": True},
    "w/o MAGCS": {"disable_magcs": True},
    "w/o HFDAN": {"disable_hfdan": True},
}


def run_ablation(dataset, config, variants=None, jobs=1):
    """Cross-validate the full model and each component-removed variant."""
    names = list(ABLATIONS) if variants is None else list(variants)
    out = {}
    for name in names:
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation variant {name!r}")
        out[name] = kfold_evaluate(dataset, config.replace(**ABLATIONS[name]), jobs=jobs)
    return out


PAF_GRID = (0.03, 0.05, 0.08, 0.10)
METHOD_GRID = ("set_to_one", "halve", "zero_out")
METHOD_LABELS = {"set_to_one": "Set to 1", "halve": "Halving", "zero_out": "Zeroing-out"}


def run_sweep(dataset, config, study, values=None, jobs=1):
    """Vary one hyperparameter (``paf`` or ``perturbation``); returns ``[(value, report)]``."""
    if study == "paf":
        grid = PAF_GRID if values is None else values
        return [(v, kfold_evaluate(dataset, config.replace(paf=float(v)), jobs=jobs)) for v in grid]
    if study in ("fpm", "perturbation"):
        grid = METHOD_GRID if values is None else values
        return [(v, kfold_evaluate(dataset, config.replace(perturbation=v), jobs=jobs)) for v in grid]
    raise ConfigError(f"unknown sweep {study!r}; expected 'paf' or 'fpm'")


def format_table(rows, first_column, columns=("ACC", "PRE", "REC")):
    """Plain-text table: one row per setting with mean metrics."""
    head = [first_column] + list(columns)
    body = []
    for label, report in rows:
        if isinstance(label, float):
            label = f"{label:.2f}"
        label = METHOD_LABELS.get(label, label)
        mean = report.mean
        body.append([str(label)] + [f"{mean[c]:.4f}" for c in columns])
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    fmt = " | ".join("{:<%d}" % w for w in widths)
    lines = [fmt.format(*head), "-+-".join("-" * w for w in widths)]
    lines.extend(fmt.format(*r) for r in body)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- inspection


def stacks_from_stage(stage, ids, X):
    """Split a batched stage back into one :class:`magcs.GraphStack` per patient."""
    n, G, C = stage.scores.shape
    b = stage.batch
    out = []
    for p in range(n):
        graphs = []
        for m in range(G):
            g = p * G + m
            lo, hi = b.indptr[g * C], b.indptr[(g + 1) * C]
            dst, src, w = b.dst[lo:hi] - g * C, b.src[lo:hi] - g * C, b.weight[lo:hi]
            keep = dst != src
            edges = np.stack([dst[keep], src[keep]], axis=1)
            graphs.append(
                magcs.ActivationGraph(
                    m, C, edges, w[keep], stage.activated[p, m],
                    np.stack([X[p], stage.scores[p, m]], axis=1),
                )
            )
        out.append(magcs.GraphStack(ids[p], graphs))
    return out


def construct(dataset, config, epochs=0):
    """Graph stacks and influence matrices for every patient.

    With ``epochs == 0`` the model is freshly initialised from the seed;
    otherwise it is first trained on all patients for that many epochs.
    """
    every = np.arange(len(dataset))
    if epochs > 0:
        res = train_fold(dataset, (every, every[:0]), config.replace(epochs=epochs))
        model, zs = res.model, res.normalizers
        raw = [z.apply(r) for z, r in zip(zs, dataset.raw)]
    else:
        model = build_model(modality_specs(dataset, config), dataset.classes, config, fold_rng(config.seed, 0))
        _, raw = _normalise(dataset, every)
    with T.no_grad():
        x, _ = compress(model, raw)
    stage = stage_one(model, x.data)
    stacks = stacks_from_stage(stage, dataset.ids, x.data)
    influence = [mdfd.InfluenceMatrix(stage.scores[p], pid) for p, pid in enumerate(dataset.ids)]
    return stacks, influence
