//! Plan files: `original_index,label,strategy`, one row per selected sample.
//!
//! `original_index` is the sample's origin index, so a plan made on a split of
//! a larger dataset still names rows of the file the data came from.

use std::collections::HashMap;
use std::io::{Read, Write};

use super::{ReductionError, ReductionPlan, Result, Strategy};
use crate::dataset::{Dataset, QuotaPlan};

pub fn write_plan_csv(plan: &ReductionPlan, dataset: &Dataset, out: impl Write) -> Result<()> {
    plan.validate(dataset)?;
    let err = |e: csv::Error| ReductionError::Format(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["original_index", "label", "strategy"]).map_err(err)?;
    for &i in plan.selected() {
        let s = &dataset.samples()[i];
        w.write_record([
            dataset.origin()[i].to_string(),
            s.label.to_string(),
            plan.strategy().name().to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| ReductionError::Format(e.to_string()))
}

/// Replays a plan file against `dataset`; quotas are recounted from the rows.
pub fn read_plan_csv(input: impl Read, dataset: &Dataset) -> Result<ReductionPlan> {
    let position: HashMap<usize, usize> = dataset
        .origin()
        .iter()
        .enumerate()
        .map(|(pos, &orig)| (orig, pos))
        .collect();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut selected = Vec::new();
    let mut strategy: Option<Strategy> = None;
    let mut per_class = vec![0usize; dataset.num_classes()];
    for (row, rec) in rdr.records().enumerate() {
        let bad = |m: String| ReductionError::Format(format!("row {}: {m}", row + 1));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 3 {
            return Err(bad(format!("{} columns, expected 3", rec.len())));
        }
        let original: usize = rec[0].parse().map_err(|_| bad(format!("bad index {:?}", &rec[0])))?;
        let label: usize = rec[1].parse().map_err(|_| bad(format!("bad label {:?}", &rec[1])))?;
        let st: Strategy = rec[2].parse()?;
        if strategy.is_some_and(|s| s != st) {
            return Err(bad("mixed strategies in one plan".into()));
        }
        strategy = Some(st);
        let pos = *position.get(&original).ok_or(ReductionError::Index {
            index: original,
            len: dataset.len(),
        })?;
        if dataset.samples()[pos].label != label {
            return Err(bad(format!("sample {original} has label {}, file says {label}", dataset.samples()[pos].label)));
        }
        per_class[label] += 1;
        selected.push(pos);
    }
    let strategy = strategy.ok_or_else(|| ReductionError::Format("plan file has no rows".into()))?;
    ReductionPlan::new(selected, strategy, QuotaPlan::from_per_class(per_class), dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{class_distribution, compute_quotas, generate_blobs, split};
    use crate::reduction::reduce_random;

    #[test]
    fn plan_replays_on_a_split() {
        let full = generate_blobs(40, 3, 2, 1.0, 1).unwrap();
        let (train, _) = split(&full, 0.25, 3).unwrap();
        let q = compute_quotas(&class_distribution(&train), 0.3).unwrap();
        let plan = reduce_random(&train, &q, 5).unwrap();
        let mut buf = Vec::new();
        write_plan_csv(&plan, &train, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("original_index,label,strategy\n"));
        assert!(text.lines().skip(1).all(|l| l.ends_with(",random")));
        assert_eq!(read_plan_csv(buf.as_slice(), &train).unwrap(), plan);
    }

    #[test]
    fn unknown_rows_are_rejected() {
        let d = generate_blobs(4, 2, 2, 1.0, 1).unwrap();
        let text = "original_index,label,strategy\n99,0,loss\n";
        assert!(matches!(
            read_plan_csv(text.as_bytes(), &d),
            Err(ReductionError::Index { index: 99, .. })
        ));
        let text = "original_index,label,strategy\n0,1,loss\n";
        assert!(read_plan_csv(text.as_bytes(), &d).is_err());
        assert!(read_plan_csv("original_index,label,strategy\n".as_bytes(), &d).is_err());
    }
}
