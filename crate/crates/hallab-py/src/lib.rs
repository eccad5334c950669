use pyo3::prelude::*;

#[pymodule]
fn hallab_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
