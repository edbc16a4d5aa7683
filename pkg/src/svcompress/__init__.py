"""GMM supervector compression toolkit.

UBM training and Baum-Welch statistics (:mod:`.gmm`), relevance-MAP
supervectors (:mod:`.supervector`), total-variability models and i-vector
extraction (:mod:`.tvm`), PLDA back-end (:mod:`.backend`), verification
metrics (:mod:`.metrics`), synthetic corpora (:mod:`.synth`) and the
pipeline / benchmark tooling (:mod:`.pipeline`, :mod:`.stages`,
:mod:`.bench`, :mod:`.cli`).
"""

__version__ = "0.1.0"
