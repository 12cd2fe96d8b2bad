//! Binary checkpoints of density matrices and CSV export of the diagonal.
//!
//! Layout: `n_points` and `extent` as little-endian `f64`, then the matrix
//! row-major as interleaved `(re, im)` little-endian `f64` pairs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, SpatialGrid, C64};

pub fn write_density<W: Write>(rho: &DensityGrid, mut out: W) -> Result<()> {
    out.write_all(&(rho.grid.n_points() as f64).to_le_bytes())?;
    out.write_all(&rho.grid.extent().to_le_bytes())?;
    for z in rho.values.iter() {
        out.write_all(&z.re.to_le_bytes())?;
        out.write_all(&z.im.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated density file".into()),
        _ => Error::Io(e),
    })?;
    Ok(f64::from_le_bytes(buf))
}

pub fn read_density<R: Read>(mut input: R) -> Result<DensityGrid> {
    let n = read_f64(&mut input)?;
    let extent = read_f64(&mut input)?;
    if !(n.fract() == 0.0 && n >= 1.0 && n <= (1u64 << 20) as f64) {
        return Err(Error::Format(format!("bad point count {n}")));
    }
    let grid = SpatialGrid::new(n as usize, extent).map_err(|e| Error::Format(e.to_string()))?;
    let n = grid.n_points();
    let mut values = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        let re = read_f64(&mut input)?;
        let im = read_f64(&mut input)?;
        values.push(C64::new(re, im));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after density matrix".into()));
    }
    DensityGrid::new(grid, Array2::from_shape_vec((n, n), values).expect("n*n values"))
}

pub fn save_density(rho: &DensityGrid, path: &Path) -> Result<()> {
    write_density(rho, BufWriter::new(File::create(path)?))
}

pub fn load_density(path: &Path) -> Result<DensityGrid> {
    read_density(BufReader::new(File::open(path)?))
}

/// `x,rho_xx` rows, 17 significant digits.
pub fn write_diagonal_csv<W: Write>(rho: &DensityGrid, mut out: W) -> Result<()> {
    writeln!(out, "x,rho_xx")?;
    for (i, d) in rho.diagonal().iter().enumerate() {
        writeln!(out, "{:.16e},{:.16e}", rho.grid.position(i), d)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{cat_state, pure_density};

    #[test]
    fn binary_round_trip_is_exact() {
        let grid = SpatialGrid::new(32, 16.0).unwrap();
        let rho = pure_density(&cat_state(grid, 4.0, 1.0, 1.0).unwrap());
        let mut bytes = Vec::new();
        write_density(&rho, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 16 + 32 * 32 * 16);
        assert_eq!(read_density(bytes.as_slice()).unwrap(), rho);
    }

    #[test]
    fn truncated_and_padded_files_fail() {
        let grid = SpatialGrid::new(16, 16.0).unwrap();
        let rho = DensityGrid::zeros(grid);
        let mut bytes = Vec::new();
        write_density(&rho, &mut bytes).unwrap();
        assert!(matches!(read_density(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        bytes.push(0);
        assert!(matches!(read_density(bytes.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn diagonal_csv_shape() {
        let grid = SpatialGrid::new(16, 16.0).unwrap();
        let mut out = Vec::new();
        write_diagonal_csv(&DensityGrid::zeros(grid), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert!(text.lines().nth(1).unwrap().starts_with("-8.0000000000000000e0,"));
    }
}
