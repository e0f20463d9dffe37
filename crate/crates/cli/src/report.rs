//! CSV rendering. Every number is written with 17 significant digits so
//! that a row parses back to the exact `f64`.

use std::fmt::Write;

use mdp_core::{
    AlphaSchedule, EditMetrics, InversionRow, Latent, NullTextInversion, PathRecord, SweepRow,
};

pub const METRICS_HEADER: &str =
    "kind,schedule,t_max,t_min,weight,beta,seed,layout_preservation,semantic_alignment,ab_gap";

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(values: &[f64]) -> String {
    values.iter().map(|&v| num(v)).collect::<Vec<_>>().join(",")
}

fn columns(prefix: &str, d: usize) -> String {
    (0..d)
        .map(|j| format!("{prefix}{j}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn metrics_row(out: &mut String, row: &SweepRow) {
    let EditMetrics {
        layout_preservation,
        semantic_alignment,
        ab_gap,
    } = row.metrics;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{}",
        row.kind.name(),
        row.schedule.name(),
        row.t_max,
        row.t_min,
        num(row.weight),
        row.beta.map(num).unwrap_or_default(),
        row.seed,
        num(layout_preservation),
        num(semantic_alignment),
        num(ab_gap),
    )
    .unwrap();
}

/// One line per row under [`METRICS_HEADER`].
pub fn metrics_csv<'a>(rows: impl IntoIterator<Item = &'a SweepRow>) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for row in rows {
        metrics_row(&mut out, row);
    }
    out
}

/// Edited endpoints of a sweep, keyed like the metrics rows.
pub fn endpoints_csv(rows: &[SweepRow]) -> String {
    let d = rows.first().map_or(0, |r| r.endpoint.len());
    let mut out = format!(
        "kind,schedule,t_max,t_min,weight,beta,{}\n",
        columns("x", d)
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.kind.name(),
            r.schedule.name(),
            r.t_max,
            r.t_min,
            num(r.weight),
            r.beta.map(num).unwrap_or_default(),
            join(&r.endpoint),
        )
        .unwrap();
    }
    out
}

/// Latents and noises of a trajectory; the last row has no noise.
pub fn path_csv(path: &PathRecord, schedule: &AlphaSchedule) -> String {
    let d = path.start().len();
    let mut out = format!(
        "index,from_alpha_bar,to_alpha_bar,{},{}\n",
        columns("x", d),
        columns("eps", d)
    );
    for (i, x) in path.latents.iter().enumerate() {
        match path.noises.get(i) {
            Some(eps) => {
                let (from, to) = path.levels(schedule, i);
                writeln!(
                    out,
                    "{i},{},{},{},{}",
                    num(from),
                    num(to),
                    join(x),
                    join(eps)
                )
                .unwrap();
            }
            None => {
                writeln!(out, "{i},,,{},{}", join(x), vec![""; d].join(",")).unwrap();
            }
        }
    }
    out
}

/// `k` is the number of leading steps denoised under the source condition.
pub fn switch_csv(endpoints: &[(usize, Latent)]) -> String {
    let d = endpoints.first().map_or(0, |(_, x)| x.len());
    let mut out = format!("k,{}\n", columns("x", d));
    for (k, x) in endpoints {
        writeln!(out, "{k},{}", join(x)).unwrap();
    }
    out
}

pub fn inversion_csv(rows: &[InversionRow]) -> String {
    let mut out = String::from("sample_steps,samples,mean_error,max_error\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.sample_steps,
            r.samples,
            num(r.mean_error),
            num(r.max_error)
        )
        .unwrap();
    }
    out
}

pub fn null_text_csv(inv: &NullTextInversion) -> String {
    let m = inv.embeddings.first().map_or(0, |c| c.dim());
    let mut out = format!(
        "index,initial_objective,final_objective,iterations,{},diagnostic\n",
        columns("null", m)
    );
    for (s, c) in inv.steps.iter().zip(&inv.embeddings) {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.step,
            num(s.initial_objective),
            num(s.final_objective),
            s.history.len().saturating_sub(1),
            join(c.values()),
            s.diagnostic.as_deref().unwrap_or("").replace(',', ";"),
        )
        .unwrap();
    }
    out
}
