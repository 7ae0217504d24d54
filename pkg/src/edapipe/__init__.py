"""edapipe: concomitant EDA/PSM acquisition simulation and pain-intensity ML pipeline.

Submodules
----------
acquisition  session configs, frame simulator, on-disk session store
ingest       newline-delimited TCP ingest service with rate capping
signal       counts calibration, filtering, tonic/phasic decomposition, peaks
features     windowed feature/label matrix assembly
select       min-max normalization, class encoding, filter feature ranking
models       from-scratch MLP and random forest classifiers
evaluation   stratified cross-validation and confusion-matrix metrics
goldens      reference confusion matrices with verified metric values
cli          command-line entry point (``edapipe``)
"""

__version__ = "0.1.0"
