//! Long-format sample files: one row per draw and parameter.

use std::io::{Read, Write};

use super::{ParameterSet, PosteriorSamples};
use crate::error::{Error, Result};

pub const SAMPLES_HEADER: [&str; 4] = ["chain", "iteration", "parameter_name", "value"];

pub fn write_samples_csv<P: ParameterSet, W: Write>(samples: &PosteriorSamples<P>, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(SAMPLES_HEADER)?;
    for ((draw, chain), iteration) in samples.draws.iter().zip(&samples.chain_ids).zip(&samples.iterations) {
        let (chain, iteration) = (chain.to_string(), iteration.to_string());
        for (name, value) in draw.names().iter().zip(draw.values()) {
            out.write_record([chain.as_str(), iteration.as_str(), name.as_str(), &value.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a sample file written by [`write_samples_csv`]. Rows of one draw
/// must be contiguous. The file carries no log-posterior values, so the
/// returned trace is NaN and acceptance rates are empty.
pub fn read_samples_csv<P: ParameterSet, R: Read>(reader: R) -> Result<PosteriorSamples<P>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != SAMPLES_HEADER {
        return Err(Error::Validation(format!(
            "sample file header must be {}, found {}",
            SAMPLES_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut samples = PosteriorSamples {
        draws: Vec::new(),
        chain_ids: Vec::new(),
        iterations: Vec::new(),
        log_posterior_trace: Vec::new(),
        acceptance: Vec::new(),
    };
    let mut current: Option<(usize, usize)> = None;
    let mut pairs: Vec<(String, f64)> = Vec::new();
    let flush = |key: Option<(usize, usize)>, pairs: &mut Vec<(String, f64)>, s: &mut PosteriorSamples<P>| -> Result<()> {
        if let Some((chain, iteration)) = key {
            s.draws.push(P::from_named(pairs)?);
            s.chain_ids.push(chain);
            s.iterations.push(iteration);
            s.log_posterior_trace.push(f64::NAN);
            pairs.clear();
        }
        Ok(())
    };
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = row as u64 + 2;
        let field = |i: usize| record.get(i).ok_or_else(|| Error::Row { line, message: "missing field".into() });
        let parse_err = |what: &str| Error::Row { line, message: format!("invalid {what}") };
        let chain: usize = field(0)?.parse().map_err(|_| parse_err("chain"))?;
        let iteration: usize = field(1)?.parse().map_err(|_| parse_err("iteration"))?;
        let value: f64 = field(3)?.parse().map_err(|_| parse_err("value"))?;
        let key = Some((chain, iteration));
        if key != current {
            flush(current, &mut pairs, &mut samples)?;
            current = key;
        }
        pairs.push((field(2)?.to_string(), value));
    }
    flush(current, &mut pairs, &mut samples)?;
    if samples.draws.is_empty() {
        return Err(Error::Validation("sample file contains no draws".into()));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParameters;

    #[test]
    fn samples_round_trip_exactly() {
        let mut a = ModelParameters::zeros(2, 2, 1);
        a.beta = [vec![-1.0 / 3.0, 0.1], vec![0.7, -2.0e-9]];
        a.trans_logit_dev = vec![[0.25, -0.5], [1e-300, 3.0]];
        let mut b = a.clone();
        b.sigma_v = std::f64::consts::PI;
        let samples = PosteriorSamples {
            draws: vec![a, b],
            chain_ids: vec![0, 1],
            iterations: vec![10, 10],
            log_posterior_trace: vec![1.0, 2.0],
            acceptance: Vec::new(),
        };
        let mut buf = Vec::new();
        write_samples_csv(&samples, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("chain,iteration,parameter_name,value\n0,10,beta[1][0],"));
        let back: PosteriorSamples<ModelParameters> = read_samples_csv(buf.as_slice()).unwrap();
        assert_eq!(back.draws, samples.draws);
        assert_eq!(back.chain_ids, samples.chain_ids);
        assert_eq!(back.iterations, samples.iterations);
    }

    #[test]
    fn bad_rows_report_line_numbers() {
        let text = "chain,iteration,parameter_name,value\n0,1,sigma_v,abc\n";
        let err = read_samples_csv::<ModelParameters, _>(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Row { line: 2, .. }), "{err}");
        let text = "chain,iter,name,value\n";
        assert!(read_samples_csv::<ModelParameters, _>(text.as_bytes()).is_err());
    }
}
