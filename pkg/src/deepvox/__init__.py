"""Speaker verification on raw audio.

Submodules:
    audio       voice activity detection, clip framing, SNR-controlled mixing
    synth       deterministic synthetic speaker corpus (source-filter voices)
    nd          reverse-mode autodiff core with compiled/numpy conv kernels
    filterbank  learned time-domain filterbank network
    embedder    frame-level speaker embedding network
    loss        cosine triplet loss
    mining      batch assembly and curriculum negative mining
    training    identification pretraining, verification training, checkpoints
    metrics     trial scoring, EER / TMR@FMR / minDCF / DET
    ablate      guided backprop relevance, PSD analysis, pitch estimation
    io          container formats (frames, embeddings), manifests, trial files
    cli         command line entry points

Kept import-light on purpose: the CLI must be able to pin thread counts
before numpy is first imported.
"""

__version__ = "0.1.0"
