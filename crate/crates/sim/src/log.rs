//! Per-tick telemetry rows and their CSV encoding. Floats carry nine
//! significant digits; wall-clock timings are kept out so logs replay
//! byte-identically.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

pub const HEADER: &str = "t,x,y,theta,delta,v,a,delta_des,v_des,v_cmd,s_safe,override_active,status,failsafe,u_delta_rate,u_accel,clearance";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub delta: f64,
    pub v: f64,
    /// Measured acceleration handed to the controller.
    pub a: f64,
    pub delta_des: f64,
    pub v_des: f64,
    pub v_cmd: f64,
    pub s_safe: f64,
    pub override_active: bool,
    pub status: String,
    pub failsafe: bool,
    /// Inputs integrated by the plant from this row to the next.
    pub u_delta_rate: f64,
    pub u_accel: f64,
    /// Signed body-to-obstacle clearance (m), `inf` without obstacles.
    pub clearance: f64,
}

fn num(out: &mut String, x: f64) {
    use std::fmt::Write as _;
    if x.is_finite() {
        write!(out, "{x:.8e}").unwrap();
    } else {
        write!(out, "{x}").unwrap();
    }
}

impl SimRow {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(256);
        for x in [
            self.t, self.x, self.y, self.theta, self.delta, self.v, self.a, self.delta_des,
            self.v_des, self.v_cmd, self.s_safe,
        ] {
            num(&mut s, x);
            s.push(',');
        }
        s.push_str(if self.override_active { "1," } else { "0," });
        s.push_str(&self.status);
        s.push_str(if self.failsafe { ",1," } else { ",0," });
        num(&mut s, self.u_delta_rate);
        s.push(',');
        num(&mut s, self.u_accel);
        s.push(',');
        num(&mut s, self.clearance);
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimLog {
    pub rows: Vec<SimRow>,
}

impl SimLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{}", r.to_csv())?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn min_clearance(&self) -> f64 {
        self.rows.iter().map(|r| r.clearance).fold(f64::INFINITY, f64::min)
    }

    pub fn override_ticks(&self) -> usize {
        self.rows.iter().filter(|r| r.override_active).count()
    }

    /// Lowest logged speed while `x0 < x < x1`, `None` if no row falls inside.
    pub fn min_speed_between(&self, x0: f64, x1: f64) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.x > x0 && r.x < x1)
            .map(|r| r.v)
            .min_by(f64::total_cmp)
    }
}
