//! Post-run reduction of a `RunLog` into the handful of numbers the
//! acceptance checks and the CLI report care about.

use super::harness::RunLog;

#[derive(Debug, Clone)]
pub struct Summary {
    pub name: String,
    pub ticks: usize,
    pub mass_truth: f64,
    pub mass_hat_final: f64,
    pub mass_err_final: f64,
    /// Worst published-estimate error over the whole run.
    pub mass_err_max: f64,
    pub convergence_time: Option<f64>,
    /// Relative payload-moment error at the freeze tick.
    pub moment_err_rel: Option<f64>,
    /// Largest update-law derivative norm after the freeze.
    pub d_hat_dot_max_post: f64,
    /// Worst position/orientation error norms over the final second.
    pub pos_err_final: f64,
    pub ori_err_final: f64,
    /// Largest per-tick Lyapunov increase after the 0.1 s transient.
    pub v_increase_max: f64,
    /// Worst tracking deviations during the trot phase, if any.
    pub trot_pos_dev_max: Option<f64>,
    pub trot_ori_dev_max: Option<f64>,
    pub swing_force_max: Option<f64>,
    pub fallback_events: usize,
}

pub fn summarize_run(log: &RunLog) -> Summary {
    let rows = &log.rows;
    let truth = log.scenario.payload.mass;
    let last = rows.last().expect("runs log at least one row");
    let t_end = last.t;

    let mass_err_max = rows
        .iter()
        .map(|r| (r.m_hat - truth).abs())
        .fold(0.0, f64::max);

    let moment_err_rel = log.freeze_time.and_then(|tf| {
        let denom = log.tau_p_nominal.norm();
        if denom < 1e-12 {
            return None;
        }
        rows.iter()
            .find(|r| r.t >= tf)
            .map(|r| (r.tau_p_hat - log.tau_p_nominal).norm() / denom)
    });

    let d_hat_dot_max_post = log
        .freeze_time
        .map(|tf| {
            rows.iter()
                .filter(|r| r.t > tf)
                .map(|r| r.d_hat_dot.norm())
                .fold(0.0, f64::max)
        })
        .unwrap_or(f64::NAN);

    let final_window = t_end - 1.0;
    let (mut pos_f, mut ori_f) = (0.0f64, 0.0f64);
    for r in rows.iter().filter(|r| r.t >= final_window) {
        pos_f = pos_f.max(r.e_r.norm());
        ori_f = ori_f.max(r.e_q.norm());
    }

    let mut v_inc: f64 = 0.0;
    for w in rows.windows(2) {
        if w[0].t >= 0.1 {
            v_inc = v_inc.max(w[1].v_lyap - w[0].v_lyap);
        }
    }

    let (mut trot_pos, mut trot_ori, mut swing_f) = (None, None, None);
    if let Some(ts) = log.trot_start {
        let (mut p, mut o, mut s) = (0.0f64, 0.0f64, 0.0f64);
        for r in rows.iter().filter(|r| r.t >= ts) {
            p = p.max(r.e_r.norm());
            o = o.max(r.e_q.norm());
            for leg in 0..4 {
                if !r.stance[leg] {
                    s = s.max(r.forces[leg].norm());
                }
            }
        }
        trot_pos = Some(p);
        trot_ori = Some(o);
        swing_f = Some(s);
    }

    Summary {
        name: log.scenario.name.clone(),
        ticks: rows.len(),
        mass_truth: truth,
        mass_hat_final: last.m_hat,
        mass_err_final: (last.m_hat - truth).abs(),
        mass_err_max,
        convergence_time: log.convergence_time,
        moment_err_rel,
        d_hat_dot_max_post,
        pos_err_final: pos_f,
        ori_err_final: ori_f,
        v_increase_max: v_inc,
        trot_pos_dev_max: trot_pos,
        trot_ori_dev_max: trot_ori,
        swing_force_max: swing_f,
        fallback_events: log.fallback_events,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.9e}")).unwrap_or_default()
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "name,ticks,mass_truth,mass_hat_final,mass_err_final,mass_err_max,\
             convergence_time,moment_err_rel,d_hat_dot_max_post,pos_err_final,ori_err_final,\
             v_increase_max,trot_pos_dev_max,trot_ori_dev_max,swing_force_max,fallback_events\n",
        );
        s.push_str(&format!(
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{},{},{},{}\n",
            self.name,
            self.ticks,
            self.mass_truth,
            self.mass_hat_final,
            self.mass_err_final,
            self.mass_err_max,
            opt(self.convergence_time),
            opt(self.moment_err_rel),
            self.d_hat_dot_max_post,
            self.pos_err_final,
            self.ori_err_final,
            self.v_increase_max,
            opt(self.trot_pos_dev_max),
            opt(self.trot_ori_dev_max),
            opt(self.swing_force_max),
            self.fallback_events,
        ));
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        use std::fmt::Write as _;
        let _ = writeln!(s, "scenario: {} ({} ticks)", self.name, self.ticks);
        let _ = writeln!(
            s,
            "mass: truth {:.3} kg, final estimate {:.6} kg (err {:.3e}, max err {:.3e})",
            self.mass_truth, self.mass_hat_final, self.mass_err_final, self.mass_err_max
        );
        match self.convergence_time {
            Some(tc) => {
                let _ = writeln!(s, "convergence: {tc:.3} s");
            }
            None => {
                let _ = writeln!(s, "convergence: not reached");
            }
        }
        if let Some(me) = self.moment_err_rel {
            let _ = writeln!(s, "payload moment error at freeze: {:.2}%", 100.0 * me);
        }
        let _ = writeln!(
            s,
            "post-freeze max |d_hat_dot|: {:.3e}",
            self.d_hat_dot_max_post
        );
        let _ = writeln!(
            s,
            "final-second tracking: {:.3e} m, {:.3e} rad",
            self.pos_err_final, self.ori_err_final
        );
        let _ = writeln!(s, "max per-tick V increase after 0.1 s: {:.3e}", self.v_increase_max);
        if let (Some(p), Some(o)) = (self.trot_pos_dev_max, self.trot_ori_dev_max) {
            let _ = writeln!(s, "trot deviations: {:.3e} m, {:.3e} rad", p, o);
        }
        if let Some(f) = self.swing_force_max {
            let _ = writeln!(s, "max swing-leg force: {:.3e} N", f);
        }
        let _ = writeln!(s, "fallback events: {}", self.fallback_events);
        s
    }
}
