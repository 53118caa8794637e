"""Few-shot listener-personalized SER toolkit.

Thin wrapper over the C++ core; see the project README for the pipeline
walkthrough (synth -> pretrain -> meta_train -> evaluate).
"""

try:
    from ._mpser import (  # type: ignore[attr-defined]
        ConfigError,
        ContractError,
        IoError,
        Model,
        ShapeError,
        ablate,
        class_weights,
        emotion_names,
        evaluate,
        meta_train,
        pretrain,
        score,
        synth,
        threshold,
    )
except ImportError:  # running against a build tree, module on sys.path
    from _mpser import (  # type: ignore[no-redef]
        ConfigError,
        ContractError,
        IoError,
        Model,
        ShapeError,
        ablate,
        class_weights,
        emotion_names,
        evaluate,
        meta_train,
        pretrain,
        score,
        synth,
        threshold,
    )

__all__ = [
    "ConfigError",
    "ContractError",
    "IoError",
    "Model",
    "ShapeError",
    "ablate",
    "class_weights",
    "emotion_names",
    "evaluate",
    "meta_train",
    "pretrain",
    "score",
    "synth",
    "threshold",
]
