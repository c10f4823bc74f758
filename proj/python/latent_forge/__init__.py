"""Sparse-autoencoder feature discovery for music-model activations.

The heavy lifting lives in the native ``_latent_forge`` extension; this
package re-exports it and adds :mod:`latent_forge.protocol`, the wire
protocol that model adapters speak to serve label proposals and embeddings.
"""

from ._latent_forge import (
    ActivationCorpus,
    ConfigError,
    CorpusManifest,
    DataError,
    FeatureCatalog,
    FeatureSummary,
    Sae,
    SteeringVector,
    TopExample,
    apply_steering,
    read_catalog,
    read_corpus,
    read_steering_vector,
    run_cli,
    top_k_project,
    write_corpus,
)

__all__ = [
    "ActivationCorpus",
    "ConfigError",
    "CorpusManifest",
    "DataError",
    "FeatureCatalog",
    "FeatureSummary",
    "Sae",
    "SteeringVector",
    "TopExample",
    "apply_steering",
    "read_catalog",
    "read_corpus",
    "read_steering_vector",
    "run_cli",
    "top_k_project",
    "write_corpus",
]
