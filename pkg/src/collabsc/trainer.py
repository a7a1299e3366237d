"""Training orchestration: pretraining, the three-stage batch loop, evaluation.

Per batch, one training round is:
  stage 1 - several optimizer steps on the subspace objective over the
            autoencoder and the batch's coefficient matrix (diagonal
            re-projected to zero after every step), then refresh the
            subspace affinity;
  stage 2 - classifier-only steps on the collaborative loss, with the
            encoder output frozen;
  stage 3 - one joint step on the full objective over all parameters, the
            autoencoder group at its own smaller learning rate.

The batch partition is shuffled once from the seed and then fixed; each
batch keeps its own coefficient matrix (and optimizer moments) across
epochs, the only state keyed by batch identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .affinity import class_affinity, subspace_affinity
from .config import ExperimentConfig
from .data import Dataset
from .losses import (LossBreakdown, build_masks, collaboration_rate, negative_loss,
                     positive_loss, subspace_affinity_tensor, subspace_loss, total_loss)
from .metrics import accuracy, ari, cluster_sizes, infer_labels, nmi
from .network import Network, SelfExpressiveLayer
from .optim import Adam
from .rng import Xorshift64Star, mix_seed

TRAIN_LOG_HEADER = ("step,coeff_norm_sq,self_expression,reconstruction,l_sub,"
                    "l_pos,l_neg,alpha,omega,total,count_pos,count_neg")
METRICS_HEADER_PREFIX = "epoch,n,k,acc,nmi,ari"
PRETRAIN_LOG_HEADER = "epoch,reconstruction_loss"


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; the model holds the last finite snapshot."""


def make_batches(n: int, batch_size: int, rng: Xorshift64Star) -> list[np.ndarray]:
    """Fixed seeded partition into index chunks; a lone trailing point is
    folded into the previous batch so every batch has at least 2 rows."""
    if n < 2:
        raise ValueError(f"need at least 2 points to train, got {n}")
    perm = rng.shuffled(n)
    chunks = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and chunks[-1].size == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def eval_chunks(n: int, batch_size: int) -> list[np.ndarray]:
    idx = np.arange(n)
    chunks = [idx[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and chunks[-1].size == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


@dataclass
class MetricsRow:
    epoch: int
    n: int
    k: int
    acc: float
    nmi: float
    ari: float
    sizes: tuple[int, ...]


@dataclass
class TrainResult:
    network: Network
    config: ExperimentConfig
    coeff_layers: dict[int, SelfExpressiveLayer]
    batches: list[np.ndarray]
    train_log: list[LossBreakdown] = field(default_factory=list)
    metrics_history: list[MetricsRow] = field(default_factory=list)
    pretrain_log: list[float] = field(default_factory=list)

    def checkpoint_params(self) -> dict[str, np.ndarray]:
        params = self.network.snapshot()
        for i, layer in self.coeff_layers.items():
            params[f"selfexpr.batch_{i}.C"] = layer.coeffs.values.copy()
        return params


def predict(network: Network, features) -> np.ndarray:
    """Inference path: encode, classify, row argmax. Never touches the
    decoder or any coefficient matrix."""
    return infer_labels(network.predictions(features).values)


def predict_dataset(network: Network, features: np.ndarray, batch_size: int) -> np.ndarray:
    parts = [predict(network, features[chunk])
             for chunk in eval_chunks(features.shape[0], batch_size)]
    return np.concatenate(parts)


def evaluate(network: Network, dataset: Dataset, epoch: int, batch_size: int) -> MetricsRow:
    labels_pred = predict_dataset(network, dataset.features, batch_size)
    labels_true = dataset.labels_for_evaluation()
    k = network.config.num_clusters
    return MetricsRow(
        epoch=epoch, n=len(dataset), k=k,
        acc=accuracy(labels_true, labels_pred),
        nmi=nmi(labels_true, labels_pred),
        ari=ari(labels_true, labels_pred),
        sizes=tuple(int(s) for s in cluster_sizes(labels_pred, k)),
    )


class CollaborativeTrainer:
    """Owns one network, its optimizers, and the per-batch coefficient state."""

    def __init__(self, config: ExperimentConfig, dataset: Dataset):
        self.config = config
        self.dataset = dataset
        self.network = Network(config.network, dataset.feature_shape, seed=config.seed)
        self.batches = make_batches(len(dataset), config.batch_size,
                                    Xorshift64Star(mix_seed(config.seed, 2)))
        self.coeff_layers: dict[int, SelfExpressiveLayer] = {}
        self.coeff_adams: dict[int, Adam] = {}
        self.ae_adam = Adam(self.network.autoencoder_params(), lr=config.lr_ae)
        self.cls_adam = Adam(self.network.classifier_params(), lr=config.lr_other)
        self.step = 0

    # ------------------------------------------------------------------

    def _coeff_layer(self, batch_index: int) -> SelfExpressiveLayer:
        if batch_index not in self.coeff_layers:
            layer = SelfExpressiveLayer(int(self.batches[batch_index].size))
            self.coeff_layers[batch_index] = layer
            self.coeff_adams[batch_index] = Adam({"coeffs": layer.coeffs},
                                                 lr=self.config.lr_other)
        return self.coeff_layers[batch_index]

    def _reinit_coeffs(self) -> None:
        for i, layer in self.coeff_layers.items():
            layer.coeffs.values[:] = 0.0
            self.coeff_adams[i] = Adam({"coeffs": layer.coeffs}, lr=self.config.lr_other)

    def _zero_grads(self) -> None:
        for p in self.network.params.values():
            p.grad = None
        for layer in self.coeff_layers.values():
            layer.coeffs.grad = None

    # ------------------------------------------------------------------

    def pretrain(self) -> list[float]:
        """Reconstruction-only pretraining with the coefficients bypassed."""
        cfg = self.config
        adam = Adam(self.network.autoencoder_params(), lr=cfg.lr_pretrain)
        history: list[float] = []
        snapshot = self.network.snapshot()
        for _ in range(cfg.pretrain_epochs):
            epoch_loss = 0.0
            for chunk in self.batches:
                x = ad.constant(self.dataset.features[chunk])
                recon = self.network.decode(self.network.encode(x))
                loss = ad.scale(ad.frobenius_sq(ad.subtract(x, recon)), 0.5)
                value = loss.item()
                if not np.isfinite(value):
                    self.network.load_values(snapshot)
                    raise TrainingDivergedError(
                        f"pretraining reconstruction loss went non-finite ({value}); "
                        f"the model holds the last finite epoch's parameters")
                self._zero_grads()
                ad.backward(loss)
                adam.step()
                epoch_loss += value
            history.append(epoch_loss / len(self.batches))
            snapshot = self.network.snapshot()
        return history

    # ------------------------------------------------------------------

    def warm_start_classifier(self) -> None:
        """Initialize the classifier output layer as a nearest-centroid
        readout of seeded k-means prototypes in the head's feature space.

        The collaborative losses are purely attractive on the classifier, so
        a cold random head tends to drift into one class before the
        subspace affinity can teach it anything; every comparable
        autoencoder-based clustering system warm-starts its cluster heads
        from unsupervised latent structure for the same reason. Uses no
        labels and no spectral step; fully determined by the seed.
        """
        from .affinity import kmeans as _kmeans

        features = self.dataset.features
        parts = []
        for chunk in eval_chunks(features.shape[0], self.config.batch_size):
            t = self.network.encode(ad.constant(features[chunk]))
            for plan in self.network.classifier_plans:
                t = self.network._apply(plan, t)
            if t.ndim != 2:
                t = ad.reshape(t, (t.shape[0], self.network.classifier_out_in_dim))
            parts.append(t.values)
        feats = np.concatenate(parts)
        k = self.config.network.num_clusters
        labels = _kmeans(feats, k, seed=mix_seed(self.config.seed, 3), restarts=10)
        centroids = np.stack([
            feats[labels == c].mean(axis=0) if (labels == c).any() else feats.mean(axis=0)
            for c in range(k)])
        w = centroids.T
        b = -0.5 * (centroids * centroids).sum(axis=1)
        logits = feats @ w + b
        spread = float((logits - logits.mean(axis=0, keepdims=True)).std())
        gain = 4.0 / max(spread, 1e-12)  # sharp enough for confident affinities
        self.network.params["classifier.out.W"].values = gain * w
        self.network.params["classifier.out.b"].values = gain * b

    def _alpha(self, masks) -> float:
        if self.config.alpha_mode == "fixed":
            return self.config.alpha_fixed
        return collaboration_rate(masks)

    def train_batch(self, batch_index: int, u: float) -> LossBreakdown:
        cfg = self.config
        x = ad.constant(self.dataset.features[self.batches[batch_index]])
        layer = self._coeff_layer(batch_index)
        coeff_adam = self.coeff_adams[batch_index]

        # stage 1: subspace objective over autoencoder + coefficients
        for _ in range(cfg.inner_se_steps):
            latent = self.network.encode(x)
            mixed = layer.apply(latent)
            recon = self.network.decode(mixed)
            l_sub_t, _, _, _ = subspace_loss(latent, layer.coeffs, x, recon, cfg.lambda1)
            self._zero_grads()
            ad.backward(l_sub_t)
            self.ae_adam.step()
            coeff_adam.step()
            layer.project_diagonal()
        subspace_aff = subspace_affinity(layer.coeffs.values)

        # stage 2: classifier-only steps on the collaborative loss
        latent_frozen = ad.constant(self.network.encode(x).values)
        for _ in range(cfg.classifier_steps):
            nu = self.network.classify(latent_frozen)
            class_aff_t = ad.matmul(nu, ad.transpose(nu))
            class_aff = class_affinity(nu.values)
            masks = build_masks(subspace_aff, class_aff, u, cfg.l)
            l_pos_t, _, _ = positive_loss(subspace_aff, class_aff_t, u,
                                          soft_mask=cfg.soft_mask, masks=masks)
            l_neg_t, _, _ = negative_loss(class_aff, subspace_aff, cfg.l,
                                          soft_mask=cfg.soft_mask, masks=masks)
            omega_t = ad.add(l_pos_t, ad.scale(l_neg_t, self._alpha(masks)))
            self._zero_grads()
            ad.backward(omega_t)
            self.cls_adam.step()

        # stage 3: one joint step on the full objective
        latent = self.network.encode(x)
        mixed = layer.apply(latent)
        recon = self.network.decode(mixed)
        nu = self.network.classify(latent)
        l_sub_t, coeff_norm_t, self_expr_t, recon_t = subspace_loss(
            latent, layer.coeffs, x, recon, cfg.lambda1)
        subspace_aff = subspace_affinity(layer.coeffs.values)
        subspace_aff_t = subspace_affinity_tensor(layer.coeffs)
        class_aff_t = ad.matmul(nu, ad.transpose(nu))
        class_aff = class_affinity(nu.values)
        masks = build_masks(subspace_aff, class_aff, u, cfg.l)
        l_pos_t, count_pos, clamped_pos = positive_loss(
            subspace_aff, class_aff_t, u, soft_mask=cfg.soft_mask, masks=masks,
            teacher_grad=cfg.teacher_grad, subspace_aff_tensor=subspace_aff_t)
        l_neg_t, count_neg, clamped_neg = negative_loss(
            class_aff, subspace_aff_t, cfg.l, soft_mask=cfg.soft_mask, masks=masks,
            teacher_grad=cfg.teacher_grad, class_aff_tensor=class_aff_t)
        alpha = self._alpha(masks)
        omega_t = ad.add(l_pos_t, ad.scale(l_neg_t, alpha))
        total_t = total_loss(l_sub_t, omega_t, cfg.lambda_cl)
        self._zero_grads()
        ad.backward(total_t)
        self.ae_adam.step()
        self.cls_adam.step()
        coeff_adam.step()
        layer.project_diagonal()

        breakdown = LossBreakdown(
            coeff_norm_sq=coeff_norm_t.item(),
            self_expression=self_expr_t.item(),
            reconstruction=recon_t.item(),
            l_sub=l_sub_t.item(),
            l_pos=l_pos_t.item(),
            l_neg=l_neg_t.item(),
            alpha=alpha,
            omega=omega_t.item(),
            lambda_cl=cfg.lambda_cl,
            total=total_t.item(),
            count_pos=count_pos,
            count_neg=count_neg,
            clamped_pos=clamped_pos,
            clamped_neg=clamped_neg,
        )
        if not np.isfinite(breakdown.total):
            raise TrainingDivergedError(
                f"joint loss went non-finite at step {self.step}: {breakdown}")
        return breakdown

    # ------------------------------------------------------------------

    def fit(self, skip_pretrain: bool = False) -> TrainResult:
        cfg = self.config
        result = TrainResult(network=self.network, config=cfg,
                             coeff_layers=self.coeff_layers, batches=self.batches)
        if not skip_pretrain:
            result.pretrain_log = self.pretrain()
        if cfg.warm_start_classifier and cfg.epochs > 0:
            self.warm_start_classifier()
        if cfg.epochs == 0:
            result.metrics_history.append(
                evaluate(self.network, self.dataset, 0, cfg.batch_size))
            return result
        for epoch in range(1, cfg.epochs + 1):
            u = cfg.u_schedule[0] if epoch == 1 else cfg.u_schedule[1]
            if cfg.reinit_coeffs_each_epoch and epoch > 1:
                self._reinit_coeffs()
            for batch_index in range(len(self.batches)):
                self.step += 1
                breakdown = self.train_batch(batch_index, u)
                result.train_log.append(breakdown)
            result.metrics_history.append(
                evaluate(self.network, self.dataset, epoch, cfg.batch_size))
        return result


def fit(config: ExperimentConfig, dataset: Dataset,
        init_params: dict[str, np.ndarray] | None = None) -> TrainResult:
    """Pretrain (unless initial parameters are given) and run the main loop."""
    trainer = CollaborativeTrainer(config, dataset)
    if init_params is not None:
        trainer.network.load_values(
            {k: v for k, v in init_params.items() if not k.startswith("selfexpr.")})
        for name, values in init_params.items():
            if name.startswith("selfexpr.batch_") and name.endswith(".C"):
                idx = int(name[len("selfexpr.batch_"):-len(".C")])
                layer = trainer._coeff_layer(idx)
                if values.shape != layer.coeffs.shape:
                    raise ad.ShapeError(
                        f"checkpoint coefficient {name} has shape {values.shape}, "
                        f"expected {layer.coeffs.shape}")
                layer.coeffs.values = values.copy()
        return trainer.fit(skip_pretrain=True)
    return trainer.fit()


# ---------------------------------------------------------------------------
# CSV serialization (byte-stable for reproducibility checks)
# ---------------------------------------------------------------------------

def format_train_log_row(step: int, b: LossBreakdown) -> str:
    floats = (b.coeff_norm_sq, b.self_expression, b.reconstruction, b.l_sub,
              b.l_pos, b.l_neg, b.alpha, b.omega, b.total)
    return ",".join([str(step)] + [repr(float(v)) for v in floats]
                    + [str(b.count_pos), str(b.count_neg)])


def metrics_header(k: int) -> str:
    return METRICS_HEADER_PREFIX + "".join(f",size_{i}" for i in range(k))


def format_metrics_row(row: MetricsRow) -> str:
    return ",".join([str(row.epoch), str(row.n), str(row.k),
                     repr(float(row.acc)), repr(float(row.nmi)), repr(float(row.ari))]
                    + [str(s) for s in row.sizes])


def train_log_csv(result: TrainResult) -> str:
    lines = [TRAIN_LOG_HEADER]
    for i, b in enumerate(result.train_log, start=1):
        lines.append(format_train_log_row(i, b))
    return "\n".join(lines) + "\n"


def metrics_csv(result: TrainResult) -> str:
    lines = [metrics_header(result.config.network.num_clusters)]
    for row in result.metrics_history:
        lines.append(format_metrics_row(row))
    return "\n".join(lines) + "\n"


def pretrain_log_csv(result: TrainResult) -> str:
    lines = [PRETRAIN_LOG_HEADER]
    for i, v in enumerate(result.pretrain_log, start=1):
        lines.append(f"{i},{float(v)!r}")
    return "\n".join(lines) + "\n"
