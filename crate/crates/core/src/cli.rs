//! Run orchestration behind the `pwm-inject` binary: simulations, CSV and
//! SVG output, sweeps and the validation suite.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::analysis::{
    convergence_order, expected_orders, triple_integrator_sweep_point, OrderReport,
};
use crate::config::{Mode, RunConfig};
use crate::control::build_paper_controller;
use crate::error::{Error, Result};
use crate::plant::triple_integrator;
use crate::plot;
use crate::sim::{simulate_actual, simulate_ideal, SimTrace};
use crate::validate::{run_suite, Check};

pub const CSV_HEADER: &str =
    "t,x1,x2,x3,u,u_pwm,y,y_noisy,yhat_a,yhat_v,xbar1,xbar2,xbar3,eta1,eta2,eta3,eta4,x1ref,d";

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
    let context = context.into();
    move |e| Error::Io {
        context,
        message: e.to_string(),
    }
}

fn fmt(v: f64, out: &mut String) {
    use std::fmt::Write as _;
    if v.is_nan() {
        out.push_str("nan");
    } else {
        let _ = write!(out, "{v:.16e}");
    }
}

/// Writes one trace CSV. `primary` fills every channel; `ideal`, when given,
/// fills the `xbar` columns (otherwise `nan`). Both traces must share a grid.
pub fn write_csv<W: Write>(mut w: W, primary: &SimTrace, ideal: Option<&SimTrace>) -> Result<()> {
    if let Some(b) = ideal {
        if b.index != primary.index {
            return Err(Error::GridMismatch("actual and ideal traces".into()));
        }
    }
    if primary.state_dim != 3 || primary.eta_dim != 4 {
        return Err(Error::Dimension(
            "CSV layout expects 3 states and 4 controller states".into(),
        ));
    }
    let csv_err = |e: std::io::Error| Error::Io {
        context: "writing CSV".into(),
        message: e.to_string(),
    };
    writeln!(w, "{CSV_HEADER}").map_err(csv_err)?;
    let mut line = String::with_capacity(512);
    for i in 0..primary.len() {
        line.clear();
        let xbar = ideal.map(|b| b.x_at(i));
        let row = [primary.t[i]]
            .into_iter()
            .chain(primary.x_at(i).iter().copied())
            .chain([
                primary.u[i],
                primary.u_pwm[i],
                primary.y_clean[i],
                primary.y_noisy[i],
                primary.yhat_a[i],
                primary.yhat_v[i],
            ])
            .chain((0..3).map(|j| xbar.map_or(f64::NAN, |x| x[j])))
            .chain(primary.eta_at(i).iter().copied())
            .chain([primary.x1ref[i], primary.d[i]]);
        for (k, v) in row.enumerate() {
            if k > 0 {
                line.push(',');
            }
            fmt(v, &mut line);
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Trace {
        csv: PathBuf,
        rows: usize,
        plots: Vec<PathBuf>,
    },
    Sweep {
        report: PathBuf,
        orders: OrderReport,
    },
    Validate {
        checks: Vec<Check>,
    },
}

impl Outcome {
    /// Process exit status: nonzero when a validation check failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Validate { checks } if checks.iter().any(|c| !c.passed) => 1,
            _ => 0,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(io_err(format!("creating {}", path.display())))?,
    ))
}

/// Runs `cfg.mode` and writes its artifacts under `cfg.out_dir`.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let pwm = cfg.pwm()?;
    if cfg.mode == Mode::Validate {
        return Ok(Outcome::Validate {
            checks: run_suite(&pwm),
        });
    }
    fs::create_dir_all(&cfg.out_dir)
        .map_err(io_err(format!("creating {}", cfg.out_dir.display())))?;

    if cfg.mode == Mode::Sweep {
        let sim = cfg.sim();
        let sc = cfg.scenario();
        let orders = convergence_order(&cfg.sweep_epsilons, &expected_orders(), |e| {
            Ok(
                triple_integrator_sweep_point(e, cfg.u_max, &sim, &sc, cfg.transient_exclusion)?
                    .channels(),
            )
        })?;
        let report = cfg.out_dir.join("orders.toml");
        fs::write(&report, orders.to_toml())
            .map_err(io_err(format!("writing {}", report.display())))?;
        return Ok(Outcome::Sweep { report, orders });
    }

    let plant = triple_integrator();
    let co = build_paper_controller()?;
    let (sim, sc) = (cfg.sim(), cfg.scenario());
    let (primary, ideal) = match cfg.mode {
        Mode::Actual => (simulate_actual(&plant, &co, &pwm, &sim, &sc)?, None),
        Mode::Ideal => {
            let tr = simulate_ideal(&plant, &co, &pwm, &sim, &sc)?;
            (tr.clone(), Some(tr))
        }
        _ => (
            simulate_actual(&plant, &co, &pwm, &sim, &sc)?,
            Some(simulate_ideal(&plant, &co, &pwm, &sim, &sc)?),
        ),
    };
    let name = match cfg.mode {
        Mode::Actual => "actual",
        Mode::Ideal => "ideal",
        _ => "both",
    };
    let csv = cfg.out_dir.join(format!("trace_{name}.csv"));
    write_csv(create(&csv)?, &primary, ideal.as_ref())?;
    let plots = if cfg.plots {
        plot::write_figures(&cfg.out_dir, &primary, ideal.as_ref())?
    } else {
        Vec::new()
    };
    Ok(Outcome::Trace {
        csv,
        rows: primary.len(),
        plots,
    })
}
