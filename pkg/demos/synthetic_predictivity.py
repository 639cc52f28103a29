"""Score a network against synthetic neural assemblies with known ceilings.

Each assembly is a noisy linear readout of conv2 of a reference network, so
the held-out correlation of a perfect model is 1/sqrt(1 + sigma^2).  A fresh
network with another seed scores lower than the reference itself.
"""
import numpy as np

from nprl.model import Head, TrunkConfig, build_model
from nprl.predictivity import (cross_validated_score, extract_activations, generate_synthetic_assembly,
                               make_stimuli, synthetic_ceiling)


def main(n_stimuli: int = 300, resolution: int = 64):
    trunk = TrunkConfig(resolution=resolution)
    reference = build_model(trunk, Head.classifier(20), seed=0)
    other = build_model(trunk, Head.classifier(20), seed=1)
    stimuli = make_stimuli(n_stimuli, resolution, seed=0)
    X_ref = extract_activations(reference, stimuli, ("conv2",))["conv2"]
    X_other = extract_activations(other, stimuli, ("conv2",))["conv2"]
    print(f"{'sigma':>6} {'ceiling':>8} {'reference':>10} {'other seed':>11}")
    for sigma in (0.0, 0.5, 1.0, 2.0):
        assembly, _, _ = generate_synthetic_assembly(reference, "conv2", 40, sigma, stimuli, seed=0)
        Y = assembly.aligned(stimuli)
        s_ref = cross_validated_score(X_ref, Y, stimulus_ids=stimuli.ids).score
        s_other = cross_validated_score(X_other, Y, stimulus_ids=stimuli.ids).score
        print(f"{sigma:6.1f} {synthetic_ceiling(sigma):8.4f} {s_ref:10.4f} {s_other:11.4f}")


if __name__ == "__main__":
    np.seterr(all="raise")
    main()
