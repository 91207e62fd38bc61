use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::imitation::NetPolicy;
use crate::sim::{self, DomainConfig, ForestWorld};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRow {
    pub tick: u64,
    pub x: f64,
    pub y: f64,
    /// Executed.
    pub command_a: f64,
    /// Counterfactual, computed on the same scan.
    pub command_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    pub rows: Vec<ReplayRow>,
    pub crashed: bool,
    pub distance_flown: f64,
}

/// Fly `a` through `world` and record what `b` would have commanded on every
/// frame.
pub fn replay(a: &NetPolicy, b: &NetPolicy, world: &ForestWorld, domain: &DomainConfig, max_dist: f64, seed: u64) -> Result<ReplayLog> {
    if a.meta.input_width != b.meta.input_width {
        return Err(invalid(format!(
            "checkpoint input widths differ: {} vs {}",
            a.meta.input_width, b.meta.input_width
        )));
    }
    let mut rows = Vec::new();
    let mut err = None;
    let r = sim::fly(world, domain, max_dist, seed, |v| {
        let pair = a.command(v.scan).and_then(|ca| Ok((ca, b.command(v.scan)?)));
        let (ca, cb) = pair.unwrap_or_else(|e| {
            err.get_or_insert(e);
            (0.0, 0.0)
        });
        rows.push(ReplayRow {
            tick: v.tick,
            x: v.state.x,
            y: v.state.y,
            command_a: ca,
            command_b: cb,
        });
        ca
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(ReplayLog {
        rows,
        crashed: r.crashed,
        distance_flown: r.distance_flown,
    })
}

impl ReplayLog {
    pub fn mean_abs_difference(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| (r.command_a - r.command_b).abs()).sum::<f64>() / self.rows.len() as f64
    }

    /// Columns: `tick,x,y,command_a,command_b`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tick,x,y,command_a,command_b\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.tick, r.x, r.y, r.command_a, r.command_b);
        }
        s
    }

    /// Strip chart of both command traces against downrange distance, with
    /// the lateral track underneath.
    pub fn to_svg(&self, v_max: f64) -> String {
        let (w, h, pad) = (900.0, 320.0, 30.0);
        let y_end = self.rows.last().map_or(1.0, |r| r.y.max(1.0));
        let x_max = self.rows.iter().map(|r| r.x.abs()).fold(1.0, f64::max);
        let sx = |y: f64| pad + (w - 2.0 * pad) * y / y_end;
        // upper band: commands, lower band: lateral position
        let band = (h - 3.0 * pad) / 2.0;
        let cmd_y = |c: f64| pad + band / 2.0 - c / v_max * band / 2.0;
        let pos_y = |x: f64| 2.0 * pad + band * 1.5 - x / x_max * band / 2.0;
        let line = |pts: Vec<(f64, f64)>, color: &str| {
            let mut p = String::new();
            for (i, (x, y)) in pts.iter().enumerate() {
                let _ = write!(p, "{}{x:.2},{y:.2}", if i == 0 { "" } else { " " });
            }
            format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{p}\"/>\n")
        };
        let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
        s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        for mid in [cmd_y(0.0), pos_y(0.0)] {
            let _ = writeln!(
                s,
                "<line x1=\"{pad}\" x2=\"{}\" y1=\"{mid:.2}\" y2=\"{mid:.2}\" stroke=\"#bbb\"/>",
                w - pad
            );
        }
        s += &line(self.rows.iter().map(|r| (sx(r.y), cmd_y(r.command_b))).collect(), "#d62728");
        s += &line(self.rows.iter().map(|r| (sx(r.y), cmd_y(r.command_a))).collect(), "#1f77b4");
        s += &line(self.rows.iter().map(|r| (sx(r.y), pos_y(r.x))).collect(), "#333");
        let _ = writeln!(
            s,
            "<text x=\"{pad}\" y=\"18\" font-family=\"sans-serif\" font-size=\"12\">command A (blue, executed) vs B (red); lateral track below; {:.1} m{}</text>",
            self.distance_flown,
            if self.crashed { ", crashed" } else { "" }
        );
        s += "</svg>\n";
        s
    }
}
