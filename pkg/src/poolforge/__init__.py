"""Pool-based few-shot active learning engine.

Core pieces: an artifact store for model-exported pool snapshots,
reference math for sample-aware dynamic soft prompts, contextual-prior
calibration with entropy uncertainty, k-means++/KNN diversity, batch
query strategies, a round-driving orchestrator with oracle or human
labeling, and selection-analysis metrics.

Submodules import lazily so the CLI can cap numeric-library threads
before numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    # artifacts
    "PoolArtifacts": "artifacts",
    "LabeledSet": "artifacts",
    "LabeledEntry": "artifacts",
    "load_artifacts": "artifacts",
    "write_artifacts": "artifacts",
    "subset": "artifacts",
    "digest_artifacts": "artifacts",
    # fusion
    "FusionParams": "fusion",
    "generate_sample_prompt": "fusion",
    "fuse": "fusion",
    "assemble_template": "fusion",
    "synthetic_forward": "fusion",
    "random_params": "fusion",
    "write_fusion_params": "fusion",
    "load_fusion_params": "fusion",
    # calibration
    "SupportSet": "calibration",
    "build_support_set": "calibration",
    "estimate_prior": "calibration",
    "calibrate": "calibration",
    "calibrate_matrix": "calibration",
    "uncertainty": "calibration",
    "entropy_rows": "calibration",
    "ContextualCalibrator": "calibration",
    # diversity
    "Clustering": "diversity",
    "kmeans_pp": "diversity",
    "KMeansPP": "diversity",
    "KDTreeIndex": "diversity",
    "build_neighbor_index": "diversity",
    "local_diversity": "diversity",
    # strategies
    "StrategyConfig": "strategies",
    "BatchReport": "strategies",
    "ScoreRecord": "strategies",
    "joint_score": "strategies",
    "QueryStrategy": "strategies",
    "JointStrategy": "strategies",
    "EntropyStrategy": "strategies",
    "LeastConfidenceStrategy": "strategies",
    "EncoderKMeansStrategy": "strategies",
    "RandomStrategy": "strategies",
    "STRATEGIES": "strategies",
    "make_strategy": "strategies",
    # loop
    "ALState": "loop",
    "AdapterHandle": "loop",
    "init_run": "loop",
    "run_round": "loop",
    "run_loop": "loop",
    "oracle_label": "loop",
    "refresh_word_probs": "loop",
    # annotation
    "AnnotationSession": "annotation",
    "AnnotationServer": "annotation",
    "serve_annotation": "annotation",
    # metrics
    "OVERFLOW": "metrics",
    "SelectionAnalysis": "metrics",
    "imbalance": "metrics",
    "label_divergence": "metrics",
    "batch_diversity": "metrics",
    "representativeness": "metrics",
    "batch_uncertainty": "metrics",
    "js_divergence": "metrics",
    "analyze_run": "metrics",
    # synth
    "make_synthetic_pool": "synth",
    # rng
    "derive_seed": "rng",
    "stream": "rng",
    # errors
    "PoolforgeError": "errors",
    "ValidationError": "errors",
    "ArtifactError": "errors",
    "DegenerateSampleError": "errors",
    "DegeneratePoolError": "errors",
    "StrategyError": "errors",
    "AdapterError": "errors",
    "AnnotationError": "errors",
    "ConfigError": "errors",
}

__all__ = ["__version__", *sorted(_EXPORTS)]


def __getattr__(name):
    if name in _EXPORTS:
        module = import_module(f".{_EXPORTS[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
