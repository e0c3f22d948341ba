"""Unsupervised domain modeling: sample, embed, PCA-reduce, cluster.

PCA keeps the top-r principal directions of the training sample and is
reused verbatim at test time.  K-Means runs Lloyd's algorithm with
k-means++ seeding; the GMM runs EM with full covariances, K-Means
initialization, and 1e-6*I regularization each M-step.  Empty-cluster
collapse reseeds the component from the farthest point (logged).
"""

import json
import logging
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

EM_TOL = 1e-4
EM_MAX_ITER = 200
COV_REG = 1e-6


def sample_sentences(corpus, count, rng):
    """Uniform sample without replacement; returns sorted indices."""
    if count > len(corpus):
        raise ValueError(f"cannot sample {count} from corpus of {len(corpus)}")
    return rng.sample_without_replacement(len(corpus), count)


class PcaModel:
    def __init__(self, mean, projection):
        self.mean = mean            # (d,)
        self.projection = projection  # (d, r), orthonormal columns

    @property
    def r(self):
        return self.projection.shape[1]

    def transform(self, x):
        return (x - self.mean) @ self.projection


def pca_fit(features, r):
    """Top-r principal directions of the sample covariance (via SVD)."""
    features = np.asarray(features, dtype=np.float64)
    n, d = features.shape
    if r > d:
        raise ValueError(f"pca target dim {r} exceeds feature dim {d}")
    if n < r:
        raise ValueError(f"pca needs at least r={r} samples, got {n}")
    mean = features.mean(axis=0)
    centered = features - mean
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return PcaModel(mean, vt[:r].T.copy())


class KMeansModel:
    method = "kmeans"

    def __init__(self, centroids):
        self.centroids = centroids

    @property
    def k(self):
        return self.centroids.shape[0]

    def predict(self, x):
        d2 = np.square(x[:, None, :] - self.centroids[None, :, :]).sum(axis=2)
        return d2.argmin(axis=1)


class GmmModel:
    method = "gmm"

    def __init__(self, weights, means, covariances):
        self.weights = weights
        self.means = means
        self.covariances = covariances
        self.log_likelihoods = []  # per-EM-iteration trace

    @property
    def k(self):
        return self.means.shape[0]

    def _log_resp(self, x):
        n, d = x.shape
        logp = np.empty((n, self.k))
        for j in range(self.k):
            chol = np.linalg.cholesky(self.covariances[j])
            diff = x - self.means[j]
            y = np.linalg.solve(chol, diff.T).T
            maha = np.square(y).sum(axis=1)
            logdet = 2.0 * np.log(np.diag(chol)).sum()
            logp[:, j] = (np.log(self.weights[j])
                          - 0.5 * (d * np.log(2 * np.pi) + logdet + maha))
        norm = _logsumexp_rows(logp)
        return logp - norm[:, None], norm

    def predict(self, x):
        logr, _ = self._log_resp(np.asarray(x, dtype=np.float64))
        return logr.argmax(axis=1)


def _logsumexp_rows(a):
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def _kmeanspp_init(x, k, rng):
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    first = int(rng.integers(0, n))
    centroids[0] = x[first]
    d2 = np.square(x - centroids[0]).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(0, n))
        else:
            probs = d2 / total
            idx = int(np.searchsorted(np.cumsum(probs), rng.uniform()))
            idx = min(idx, n - 1)
        centroids[j] = x[idx]
        d2 = np.minimum(d2, np.square(x - centroids[j]).sum(axis=1))
    return centroids


def _lloyd(x, centroids, max_iter, tol):
    for _ in range(max_iter):
        d2 = np.square(x[:, None, :] - centroids[None, :, :]).sum(axis=2)
        labels = d2.argmin(axis=1)
        new = np.empty_like(centroids)
        for j in range(centroids.shape[0]):
            members = x[labels == j]
            if len(members) == 0:
                far = int(d2.min(axis=1).argmax())
                log.info("kmeans: reseeding empty cluster %d from farthest point", j)
                new[j] = x[far]
            else:
                new[j] = members.mean(axis=0)
        shift = np.square(new - centroids).sum()
        centroids = new
        if shift < tol:
            break
    d2 = np.square(x[:, None, :] - centroids[None, :, :]).sum(axis=2)
    inertia = float(d2.min(axis=1).sum())
    return centroids, inertia


def kmeans_fit(x, k, rng, max_iter=200, tol=1e-6, n_init=10):
    x = np.asarray(x, dtype=np.float64)
    if k > x.shape[0]:
        raise ValueError(f"K={k} exceeds sample count {x.shape[0]}")
    best, best_inertia = None, np.inf
    for _ in range(n_init):
        centroids, inertia = _lloyd(x, _kmeanspp_init(x, k, rng), max_iter, tol)
        if inertia < best_inertia:
            best, best_inertia = centroids, inertia
    return KMeansModel(best)


def gmm_fit(x, k, rng, max_iter=EM_MAX_ITER, tol=EM_TOL):
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if k > n:
        raise ValueError(f"K={k} exceeds sample count {n}")
    km = kmeans_fit(x, k, rng)
    labels = km.predict(x)
    weights = np.full(k, 1.0 / k)
    means = km.centroids.copy()
    covs = np.empty((k, d, d))
    global_cov = np.cov(x.T, bias=True).reshape(d, d) + COV_REG * np.eye(d)
    for j in range(k):
        members = x[labels == j]
        weights[j] = max(len(members), 1) / n
        covs[j] = (np.cov(members.T, bias=True).reshape(d, d) + COV_REG * np.eye(d)
                   if len(members) > 1 else global_cov)
    weights /= weights.sum()
    model = GmmModel(weights, means, covs)

    prev_ll = -np.inf
    for it in range(max_iter):
        logr, norm = model._log_resp(x)
        ll = float(norm.sum())
        model.log_likelihoods.append(ll)
        resp = np.exp(logr)
        nk = resp.sum(axis=0)
        for j in range(k):
            if nk[j] < 1e-10:
                far = int(norm.argmin())
                log.info("gmm: reseeding empty component %d from farthest point", j)
                model.means[j] = x[far]
                model.covariances[j] = global_cov
                nk[j] = 1.0
                continue
            model.means[j] = resp[:, j] @ x / nk[j]
            diff = x - model.means[j]
            model.covariances[j] = ((resp[:, j][:, None] * diff).T @ diff / nk[j]
                                    + COV_REG * np.eye(d))
        model.weights = nk / nk.sum()
        if it > 0 and abs(ll - prev_ll) < tol * max(abs(prev_ll), 1.0):
            break
        prev_ll = ll
    return model


def cluster_fit(x, k, method, rng):
    if method == "kmeans":
        return kmeans_fit(x, k, rng)
    if method == "gmm":
        return gmm_fit(x, k, rng)
    raise ValueError(f"unknown clustering method {method!r}")


def build_discriminator_dataset(corpus, sample_idx, anchors, model, k, method,
                                pca_dim, rng):
    """Cluster pooled encoder features and emit (pair index or anchor, label).

    anchors: list of (src_ids, domain_tag); they join the clustering sample
    exactly like ordinary sentences (they bias cluster formation, they do
    not force assignments).

    Returns (labeled entries, PcaModel, ClusterModel) where each entry is
    {"src": ids, "label": int, "anchor_tag": tag-or-None}.
    """
    from .discriminator import encode_features
    sampled = [corpus.pairs[i] for i in sample_idx]
    entries = [{"src": p[0], "anchor_tag": None} for p in sampled]
    entries += [{"src": src, "anchor_tag": tag} for src, tag in anchors]
    feat_pairs = [(e["src"], None, None) for e in entries]
    feats = encode_features(model, feat_pairs)
    r = min(pca_dim, feats.shape[1])
    pca = pca_fit(feats, r)
    reduced = pca.transform(feats)
    cluster = cluster_fit(reduced, k, method, rng)
    labels = cluster.predict(reduced)
    for e, lab in zip(entries, labels):
        e["label"] = int(lab)
    return entries, pca, cluster


# -- persistence ---------------------------------------------------------

def save_cluster_artifacts(out_dir, pca, cluster):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "pca_mean.npy", pca.mean)
    np.save(out / "pca_projection.npy", pca.projection)
    if cluster.method == "kmeans":
        np.save(out / "centroids.npy", cluster.centroids)
    else:
        np.save(out / "gmm_weights.npy", cluster.weights)
        np.save(out / "gmm_means.npy", cluster.means)
        np.save(out / "gmm_covariances.npy", cluster.covariances)
    (out / "cluster_manifest.json").write_text(json.dumps(
        {"method": cluster.method, "k": int(cluster.k), "pca_dim": int(pca.r)},
        indent=2))


def load_cluster_artifacts(out_dir):
    out = Path(out_dir)
    manifest = json.loads((out / "cluster_manifest.json").read_text())
    pca = PcaModel(np.load(out / "pca_mean.npy"), np.load(out / "pca_projection.npy"))
    if manifest["method"] == "kmeans":
        cluster = KMeansModel(np.load(out / "centroids.npy"))
    else:
        cluster = GmmModel(np.load(out / "gmm_weights.npy"),
                           np.load(out / "gmm_means.npy"),
                           np.load(out / "gmm_covariances.npy"))
    return pca, cluster
