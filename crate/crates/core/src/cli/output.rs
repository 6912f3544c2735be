//! CSV dialect: comma separated, `#` header comments, floats in scientific
//! notation with 17 significant digits, `nan` for missing values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::analysis::{DecayFit, EnvelopeMethod, EnvelopeReport};

use super::pipeline::Simulation;
use super::scan::{CriticalPoint, PointSummary, ScanPoint};
use super::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const TRACE_COLUMNS: [&str; 7] = [
    "time_s",
    "time_tau",
    "fz",
    "trace",
    "signal_noiseless",
    "signal_noisy",
    "envelope",
];

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".into(), fmt_f64)
}

fn fmt_tau(x: Option<f64>, tau_s: f64) -> String {
    fmt_opt(x.map(|t| t / tau_s))
}

/// Text fields must not break the one-line-per-row layout.
fn clean(text: &str) -> String {
    text.replace(['\n', '\r'], " ")
}

/// `# key: value` lines written above every table.
#[derive(Clone, Debug, Default)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new(command: &str, digest: &str) -> Self {
        let mut h = Self::default();
        h.push("tool", format!("faraday-sim {VERSION}"));
        h.push("command", command);
        h.push("config_digest", digest);
        h
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), clean(&value.to_string())));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Parses the leading `#` block of a CSV document.
    pub fn parse(text: &str) -> Self {
        let mut h = Self::default();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line[1..].split_once(':') {
                h.entries.push((k.trim().into(), v.trim().into()));
            }
        }
        h
    }
}

/// Writes header comments and a table to `path`.
pub fn write_table(
    path: &Path,
    header: &Header,
    columns: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for (k, v) in &header.entries {
        writeln!(out, "# {k}: {v}").map_err(io)?;
    }
    {
        let mut w = csv::WriterBuilder::new().from_writer(&mut out);
        let csv_err = |e: csv::Error| CliError::Io {
            path: path.display().to_string(),
            source: e.into(),
        };
        w.write_record(columns).map_err(csv_err)?;
        for row in rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Column-indexed table read back from a CSV file written by [`write_table`].
#[derive(Clone, Debug)]
pub struct Table {
    pub header: Header,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let schema = |message: String| CliError::Schema {
            path: path.display().to_string(),
            message,
        };
        let header = Header::parse(&text);
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let columns: Vec<String> = reader
            .headers()
            .map_err(|e| schema(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if columns.is_empty() || columns == [""] {
            return Err(schema("no column header".into()));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| schema(e.to_string()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self {
            header,
            columns,
            rows,
        })
    }

    /// Parsed float column; diagnostics name the column and the data row.
    pub fn float_column(&self, name: &str, path: &Path) -> Result<Vec<f64>, CliError> {
        let schema = |message: String| CliError::Schema {
            path: path.display().to_string(),
            message,
        };
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| schema(format!("missing column `{name}`")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row[idx].trim().parse::<f64>().map_err(|_| {
                    schema(format!(
                        "column `{name}`, data row {}: cannot parse `{}` as a number",
                        r + 1,
                        row[idx]
                    ))
                })
            })
            .collect()
    }
}

pub fn trace_rows(sim: &Simulation, tau_s: f64) -> Vec<Vec<String>> {
    let r = &sim.result;
    (0..r.len())
        .map(|k| {
            let env = sim.envelope.as_ref().map_or(f64::NAN, |e| {
                // Peak detection yields its own time base; only co-timed rows get a value.
                if e.times.len() == r.len() {
                    e.magnitude[k]
                } else {
                    f64::NAN
                }
            });
            vec![
                fmt_f64(r.times[k]),
                fmt_f64(r.times[k] / tau_s),
                fmt_f64(r.fz_series[k]),
                fmt_f64(r.trace_series[k]),
                fmt_f64(sim.noiseless.mean_signal[k]),
                fmt_f64(sim.noisy.mean_signal[k]),
                fmt_f64(env),
            ]
        })
        .collect()
}

pub const FIT_COLUMNS: [&str; 4] = ["quantity", "value", "value_tau", "note"];

fn fit_rows(prefix: &str, fit: &DecayFit, tau_s: f64) -> Vec<Vec<String>> {
    vec![
        vec![
            format!("{prefix}_amplitude"),
            fmt_f64(fit.amplitude),
            "nan".into(),
            String::new(),
        ],
        vec![
            format!("{prefix}_timescale_s"),
            fmt_f64(fit.timescale),
            fmt_f64(fit.timescale / tau_s),
            String::new(),
        ],
        vec![
            format!("{prefix}_one_over_e_s"),
            fmt_f64(fit.one_over_e_time),
            fmt_f64(fit.one_over_e_time / tau_s),
            String::new(),
        ],
        vec![
            format!("{prefix}_residual_rms"),
            fmt_f64(fit.residual_rms),
            "nan".into(),
            String::new(),
        ],
        vec![
            format!("{prefix}_success"),
            if fit.success { "1" } else { "0" }.into(),
            "nan".into(),
            clean(&fit.message),
        ],
    ]
}

/// Key/value report of one envelope analysis.
pub fn report_rows(report: &EnvelopeReport, tau_s: f64) -> Vec<Vec<String>> {
    let timed = |name: &str, t: Option<f64>| {
        vec![
            name.to_string(),
            fmt_opt(t),
            fmt_tau(t, tau_s),
            String::new(),
        ]
    };
    let mut rows = vec![timed("collapse_time_s", report.collapse_time)];
    match &report.selection {
        Some(sel) => {
            rows.push(vec![
                "best_model".into(),
                "nan".into(),
                "nan".into(),
                sel.best.as_str().into(),
            ]);
            rows.push(vec![
                "residual_ratio".into(),
                fmt_f64(sel.residual_ratio),
                "nan".into(),
                String::new(),
            ]);
            rows.extend(fit_rows("gaussian", &sel.gaussian, tau_s));
            rows.extend(fit_rows("exponential", &sel.exponential, tau_s));
        }
        None => rows.push(vec![
            "best_model".into(),
            "nan".into(),
            "nan".into(),
            "none".into(),
        ]),
    }
    let rev = report.revival;
    rows.push(timed("revival_time_s", rev.map(|r| r.t_revival)));
    rows.push(vec![
        "revival_amplitude_ratio".into(),
        fmt_opt(rev.map(|r| r.revival_amplitude_ratio)),
        "nan".into(),
        String::new(),
    ]);
    rows.push(timed(
        "revival_collapse_time_s",
        rev.and_then(|r| r.revival_collapse_time),
    ));
    rows.push(vec![
        "warnings".into(),
        "nan".into(),
        "nan".into(),
        clean(&report.warnings.join(";")),
    ]);
    rows
}

fn model_tag(s: &PointSummary) -> String {
    s.best_model.map_or("none", |m| m.as_str()).into()
}

pub const SCAN_TAU_COLUMNS: [&str; 15] = [
    "tau_s",
    "collapse_time_s",
    "collapse_time_tau",
    "revival_time_s",
    "revival_time_tau",
    "revival_collapse_time_s",
    "revival_collapse_time_tau",
    "revival_amplitude_ratio",
    "best_model",
    "residual_ratio",
    "gaussian_one_over_e_s",
    "exponential_one_over_e_s",
    "fit_one_over_e_tau",
    "warnings",
    "error",
];

pub fn scan_tau_rows(points: &[ScanPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            let s = &p.summary;
            let tau = p.value;
            vec![
                fmt_f64(tau),
                fmt_opt(s.collapse_time),
                fmt_tau(s.collapse_time, tau),
                fmt_opt(s.revival_time),
                fmt_tau(s.revival_time, tau),
                fmt_opt(s.revival_collapse_time),
                fmt_tau(s.revival_collapse_time, tau),
                fmt_opt(s.revival_amplitude),
                model_tag(s),
                fmt_opt(s.residual_ratio),
                fmt_opt(s.gaussian_one_over_e),
                fmt_opt(s.exponential_one_over_e),
                fmt_tau(s.best_fit_time(), tau),
                clean(&s.warnings.join(";")),
                clean(p.error.as_deref().unwrap_or("")),
            ]
        })
        .collect()
}

pub const SCAN_ANGLE_COLUMNS: [&str; 11] = [
    "theta_deg",
    "decay_time_s",
    "decay_time_tau",
    "best_model",
    "residual_ratio",
    "fit_one_over_e_s",
    "fit_one_over_e_tau",
    "gaussian_one_over_e_s",
    "exponential_one_over_e_s",
    "warnings",
    "error",
];

pub fn scan_angle_rows(points: &[ScanPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            let s = &p.summary;
            vec![
                fmt_f64(p.value),
                fmt_opt(s.collapse_time),
                fmt_tau(s.collapse_time, p.tau_s),
                model_tag(s),
                fmt_opt(s.residual_ratio),
                fmt_opt(s.best_fit_time()),
                fmt_tau(s.best_fit_time(), p.tau_s),
                fmt_opt(s.gaussian_one_over_e),
                fmt_opt(s.exponential_one_over_e),
                clean(&s.warnings.join(";")),
                clean(p.error.as_deref().unwrap_or("")),
            ]
        })
        .collect()
}

pub const SCAN_CRITICAL_COLUMNS: [&str; 14] = [
    "tau_s",
    "decay_time_homogeneous_s",
    "decay_time_homogeneous_tau",
    "decay_time_inhomogeneous_s",
    "decay_time_inhomogeneous_tau",
    "fit_one_over_e_homogeneous_s",
    "fit_one_over_e_inhomogeneous_s",
    "best_model_homogeneous",
    "best_model_inhomogeneous",
    "rwa_deviation_envelope",
    "rwa_deviation_pointwise",
    "larmor_over_chi",
    "warnings",
    "error",
];

pub fn scan_critical_rows(points: &[CriticalPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            let (h, i) = (&p.homogeneous, &p.inhomogeneous);
            let warnings: Vec<String> = h
                .warnings
                .iter()
                .map(|w| format!("homogeneous:{w}"))
                .chain(i.warnings.iter().map(|w| format!("inhomogeneous:{w}")))
                .collect();
            vec![
                fmt_f64(p.tau_s),
                fmt_opt(h.collapse_time),
                fmt_tau(h.collapse_time, p.tau_s),
                fmt_opt(i.collapse_time),
                fmt_tau(i.collapse_time, p.tau_s),
                fmt_opt(h.best_fit_time()),
                fmt_opt(i.best_fit_time()),
                model_tag(h),
                model_tag(i),
                fmt_opt(p.rwa_deviation.map(|d| d.envelope)),
                fmt_opt(p.rwa_deviation.map(|d| d.pointwise)),
                fmt_f64(p.larmor_over_chi),
                clean(&warnings.join(";")),
                clean(p.error.as_deref().unwrap_or("")),
            ]
        })
        .collect()
}

/// gnuplot script plotting columns of `data` (1-based `x` against each `ys`).
pub fn plot_script(
    data: &str,
    title: &str,
    x: (usize, &str),
    ys: &[(usize, &str)],
    log_axes: bool,
) -> String {
    let image = Path::new(data).with_extension("png");
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set datafile columnheaders\n");
    s.push_str("set terminal pngcairo size 900,600\n");
    s.push_str(&format!("set output '{}'\n", image.display()));
    s.push_str(&format!("set title '{title}'\n"));
    s.push_str(&format!("set xlabel '{}'\n", x.1));
    if log_axes {
        s.push_str("set logscale xy\n");
    }
    let curves: Vec<String> = ys
        .iter()
        .map(|(c, label)| {
            format!(
                "'{data}' using {}:{} with linespoints title '{label}'",
                x.0, c
            )
        })
        .collect();
    s.push_str(&format!("plot {}\n", curves.join(", \\\n     ")));
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    Ok(dir.to_path_buf())
}

pub fn method_from_str(s: &str) -> Option<EnvelopeMethod> {
    [
        EnvelopeMethod::QuadratureDemod,
        EnvelopeMethod::PeakDetect,
        EnvelopeMethod::Transverse,
    ]
    .into_iter()
    .find(|m| m.as_str() == s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [
            0.0,
            -1.5,
            1.0 / 3.0,
            6.02214076e23,
            f64::MIN_POSITIVE,
            -2.5e-300,
        ] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(f64::NAN), "nan");
        assert!("nan".parse::<f64>().unwrap().is_nan());
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn header_round_trip() {
        let mut h = Header::new("simulate", "abc");
        h.push("tau_s", fmt_f64(1e-3));
        let text: String = h
            .entries()
            .iter()
            .map(|(k, v)| format!("# {k}: {v}\n"))
            .collect();
        let back = Header::parse(&text);
        assert_eq!(back.get("command"), Some("simulate"));
        assert_eq!(back.get("tau_s").unwrap().parse::<f64>().unwrap(), 1e-3);
    }

    #[test]
    fn table_round_trip_and_diagnostics() {
        let dir = std::env::temp_dir().join(format!("faraday-output-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        let rows = vec![
            vec![fmt_f64(0.5), "a, b".into()],
            vec![fmt_f64(1.5), "x".into()],
        ];
        write_table(&path, &Header::new("t", "d"), &["v", "note"], &rows).unwrap();
        let t = Table::read(&path).unwrap();
        assert_eq!(t.header.get("config_digest"), Some("d"));
        assert_eq!(t.float_column("v", &path).unwrap(), vec![0.5, 1.5]);
        assert_eq!(t.rows[0][1], "a, b");
        let err = t.float_column("note", &path).unwrap_err().to_string();
        assert!(err.contains("column `note`, data row 1"), "{err}");
        assert!(t
            .float_column("w", &path)
            .unwrap_err()
            .to_string()
            .contains("missing column `w`"));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
