//! Pipeline orchestration: run configs, run directories, stages, the sweep.
