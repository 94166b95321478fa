//! On-disk formats: dense fields as two little-endian float32 planes
//! (x then y displacement, mm) with a raster sidecar; FFDs as JSON.

use std::path::Path;

use super::ffd::FfdTransform;
use super::field::DeformationField;
use crate::imagecore::io::{read_json, read_raster_f32, write_json, write_raster_f32};
use crate::Result;

pub fn write_field(path: &Path, field: &DeformationField) -> Result<()> {
    write_raster_f32(path, field.geom(), &[field.ux(), field.uy()])
}

pub fn read_field(path: &Path) -> Result<DeformationField> {
    let (geom, mut planes) = read_raster_f32(path, 2)?;
    let uy = planes.pop().expect("two planes");
    let ux = planes.pop().expect("two planes");
    DeformationField::from_components(geom, ux, uy)
}

pub fn write_ffd(path: &Path, ffd: &FfdTransform) -> Result<()> {
    write_json(path, ffd)
}

pub fn read_ffd(path: &Path) -> Result<FfdTransform> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::GridGeom;

    #[test]
    fn field_roundtrip_is_f32_exact() {
        let g = GridGeom::new(5, 4, 0.5).unwrap();
        let f = DeformationField::from_fn(g, |x, y| (x as f64 * 0.25, -(y as f64) * 0.125)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.raw");
        write_field(&p, &f).unwrap();
        let back = read_field(&p).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn ffd_roundtrip() {
        let mut t = FfdTransform::identity([10.0, 8.0], 3.0).unwrap();
        t.set_control_displacement(2, 1, (0.5, -0.25));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        write_ffd(&p, &t).unwrap();
        assert_eq!(read_ffd(&p).unwrap(), t);
    }
}
