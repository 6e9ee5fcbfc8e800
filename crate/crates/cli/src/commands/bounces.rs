//! Bounce tables: `drop,bounce,time,x,y`, one row per observed bounce.

use anyhow::{bail, Context, Result};
use bouncekit::sim::BounceEvent;
use std::collections::BTreeMap;
use std::path::Path;

use super::create;

pub fn write(path: &Path, drops: &[Vec<BounceEvent>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["drop", "bounce", "time", "x", "y"])?;
    for (d, events) in drops.iter().enumerate() {
        for (b, ev) in events.iter().enumerate() {
            w.write_record([
                d.to_string(),
                b.to_string(),
                ev.time.to_string(),
                ev.position.x.to_string(),
                ev.position.y.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(serde::Deserialize)]
struct Row {
    drop: usize,
    bounce: usize,
    time: f64,
    x: f64,
    y: f64,
}

/// Reads a bounce table, grouped by drop id and ordered by bounce index.
pub fn read(path: &Path) -> Result<Vec<(usize, Vec<BounceEvent>)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut drops: BTreeMap<usize, BTreeMap<usize, BounceEvent>> = BTreeMap::new();
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        if drops.entry(row.drop).or_default().insert(row.bounce, BounceEvent::new(row.time, row.x, row.y)).is_some() {
            bail!("{}: drop {} bounce {} appears twice", path.display(), row.drop, row.bounce);
        }
    }
    Ok(drops.into_iter().map(|(d, b)| (d, b.into_values().collect())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        let drops = vec![
            vec![BounceEvent::new(0.1, 1.0 / 3.0, -2e-17), BounceEvent::new(0.35, 0.2, 0.1)],
            vec![BounceEvent::new(0.2, 0.0, 0.0)],
        ];
        write(&p, &drops).unwrap();
        let back = read(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], (0, drops[0].clone()));
        assert_eq!(back[1], (1, drops[1].clone()));
    }
}
