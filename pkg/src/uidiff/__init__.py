"""uidiff: difference-aligned HTML perturbation, rendering, and scoring.

Subpackages cover the full loop: parse and sanitize documents
(:mod:`uidiff.dom`), forge traceable perturbation pairs
(:mod:`uidiff.perturb`), split corpora by structural difficulty
(:mod:`uidiff.partition`), render deterministically
(:mod:`uidiff.render`), embed and compare screenshots
(:mod:`uidiff.similarity`), score visual fidelity
(:mod:`uidiff.metrics`), compute refinement rewards and the clipped
group-relative objective (:mod:`uidiff.reward`), and drive multi-turn
self-refinement sessions (:mod:`uidiff.refine`).
"""

__version__ = "0.1.0"
