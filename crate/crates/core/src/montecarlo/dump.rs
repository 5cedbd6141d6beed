//! Binary dump of per-path functionals for experiment resumption.
//! Little-endian 64-bit floats behind a fixed header; the header's
//! `ensemble_id` is the composite hash of seed, grid, measure, and model
//! coefficients, so a resumed run can verify provenance in one compare.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{FunctionalsSet, Measure};

const MAGIC: &[u8; 4] = b"TPFN";
const VERSION: u32 = 1;

pub fn write_functionals<W: Write>(out: &mut W, set: &FunctionalsSet) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&set.seed.to_le_bytes())?;
    out.write_all(&set.ensemble_id.to_le_bytes())?;
    out.write_all(&(set.npaths as u64).to_le_bytes())?;
    out.write_all(&(set.factor_dim as u32).to_le_bytes())?;
    out.write_all(&set.horizon.to_le_bytes())?;
    match set.measure {
        Measure::Physical => {
            out.write_all(&[0u8])?;
            out.write_all(&0.0_f64.to_le_bytes())?;
        }
        Measure::Myopic { gamma } => {
            out.write_all(&[1u8])?;
            out.write_all(&gamma.to_le_bytes())?;
        }
    }
    let mut flags = 0u8;
    if !set.h.is_empty() {
        flags |= 1;
    }
    if !set.int_r.is_empty() {
        flags |= 2;
    }
    out.write_all(&[flags])?;

    let write_arr = |out: &mut W, arr: &[f64]| -> Result<()> {
        for v in arr {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    write_arr(out, &set.h)?;
    write_arr(out, &set.int_r)?;
    write_arr(out, &set.stoch_int_theta)?;
    write_arr(out, &set.int_theta_sq)?;
    write_arr(out, &set.l)?;
    write_arr(out, &set.y_t)?;
    Ok(())
}

pub fn load_functionals<R: Read>(input: &mut R) -> Result<FunctionalsSet> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config("not a functionals dump (bad magic)".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Config(format!("unsupported dump version {version}")));
    }
    input.read_exact(&mut u64buf)?;
    let seed = u64::from_le_bytes(u64buf);
    input.read_exact(&mut u64buf)?;
    let ensemble_id = u64::from_le_bytes(u64buf);
    input.read_exact(&mut u64buf)?;
    let npaths = u64::from_le_bytes(u64buf) as usize;
    input.read_exact(&mut u32buf)?;
    let factor_dim = u32::from_le_bytes(u32buf) as usize;
    input.read_exact(&mut u64buf)?;
    let horizon = f64::from_le_bytes(u64buf);
    let mut tag = [0u8; 1];
    input.read_exact(&mut tag)?;
    input.read_exact(&mut u64buf)?;
    let gamma = f64::from_le_bytes(u64buf);
    let measure = match tag[0] {
        0 => Measure::Physical,
        1 => Measure::Myopic { gamma },
        other => return Err(Error::Config(format!("bad measure tag {other}"))),
    };
    input.read_exact(&mut tag)?;
    let flags = tag[0];

    let read_arr = |input: &mut R, len: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            input.read_exact(&mut buf)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let h = read_arr(input, if flags & 1 != 0 { npaths } else { 0 })?;
    let comps = if flags & 2 != 0 { npaths } else { 0 };
    let int_r = read_arr(input, comps)?;
    let stoch = read_arr(input, comps)?;
    let th2 = read_arr(input, comps)?;
    let l = read_arr(input, npaths * factor_dim)?;
    let y_t = read_arr(input, npaths * factor_dim)?;

    Ok(FunctionalsSet {
        horizon,
        measure,
        npaths,
        factor_dim,
        seed,
        ensemble_id,
        h,
        int_r,
        stoch_int_theta: stoch,
        int_theta_sq: th2,
        l,
        y_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let set = FunctionalsSet {
            horizon: 2.5,
            measure: Measure::Myopic { gamma: 0.5 },
            npaths: 3,
            factor_dim: 2,
            seed: 99,
            ensemble_id: 0xdeadbeef,
            h: vec![],
            int_r: vec![],
            stoch_int_theta: vec![],
            int_theta_sq: vec![],
            l: vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6],
            y_t: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        let mut buf = Vec::new();
        write_functionals(&mut buf, &set).unwrap();
        let back = load_functionals(&mut buf.as_slice()).unwrap();
        assert_eq!(back.npaths, 3);
        assert_eq!(back.measure, Measure::Myopic { gamma: 0.5 });
        assert_eq!(back.l, set.l);
        assert_eq!(back.y_t, set.y_t);
        assert!(back.h.is_empty());
        assert_eq!(back.ensemble_id, set.ensemble_id);
    }
}
