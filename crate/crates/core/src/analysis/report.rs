use std::io::Write;

use super::{AnalysisError, GroupedCorrelation, RegressionFit};

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

/// Wide regression table: one row per term, two columns (estimate with
/// stars, 95% interval) per fit, then fit statistics.
pub fn write_table1<W: Write>(w: W, fits: &[&RegressionFit]) -> Result<(), AnalysisError> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["term".to_string()];
    for f in fits {
        header.push(f.model.clone());
        header.push(format!("{}_ci95", f.model));
    }
    wtr.write_record(&header)?;

    let mut terms: Vec<&str> = Vec::new();
    for f in fits {
        for c in &f.coefficients {
            if !terms.contains(&c.term.as_str()) {
                terms.push(&c.term);
            }
        }
    }
    for term in terms {
        let mut rec = vec![term.to_string()];
        for f in fits {
            match f.coefficients.iter().find(|c| c.term == term) {
                Some(c) => {
                    rec.push(format!("{}{}", fmt(c.estimate), c.stars));
                    rec.push(format!("[{}, {}]", fmt(c.ci95.0), fmt(c.ci95.1)));
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        wtr.write_record(&rec)?;
    }
    let stat = |name: &str, value: &dyn Fn(&RegressionFit) -> (String, String)| {
        let mut rec = vec![name.to_string()];
        for f in fits {
            let (a, b) = value(f);
            rec.push(a);
            rec.push(b);
        }
        rec
    };
    wtr.write_record(stat("n", &|f| (f.n.to_string(), String::new())))?;
    wtr.write_record(stat("r_squared", &|f| (fmt(f.r_squared), String::new())))?;
    wtr.write_record(stat("rmse", &|f| (fmt(f.rmse), format!("[{}, {}]", fmt(f.rmse_ci95.0), fmt(f.rmse_ci95.1)))))?;
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_correlations_csv<W: Write>(w: W, rows: &[GroupedCorrelation]) -> Result<(), AnalysisError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["group", "n", "r", "ci_low", "ci_high", "B", "seed", "note"])?;
    for g in rows {
        let mut rec = vec![g.group.clone(), g.n.to_string()];
        match &g.correlation {
            Some(c) => rec.extend([
                c.r.to_string(),
                c.ci_low.to_string(),
                c.ci_high.to_string(),
                c.bootstrap.to_string(),
                c.seed.to_string(),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        rec.push(g.note.clone());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}
