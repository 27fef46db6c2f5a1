use pyo3::prelude::*;

#[pymodule]
fn dynasplat_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
