//! Fixed-length feature vectors built from trial results.
//!
//! Student vectors one-hot encode every public slot outcome and append the
//! previous estimate(s). Teacher vectors hold the privileged per-slot (or
//! per-block, per-type) transmitter counts followed by the previous true
//! count(s). All counts and estimates are divided by the population bound.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocols::SlotOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    HomoStudent,
    HomoTeacher,
    HetStudent,
    HetTeacher,
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::HomoStudent => "homo_student",
            Layout::HomoTeacher => "homo_teacher",
            Layout::HetStudent => "het_student",
            Layout::HetTeacher => "het_teacher",
        }
    }

    /// Vector length for trial length `l` (slots or blocks) and `types` node types.
    pub fn len(self, l: usize, types: usize) -> usize {
        match self {
            Layout::HomoStudent => 3 * l + 1,
            Layout::HomoTeacher => l + 1,
            Layout::HetStudent => 4 * types.saturating_sub(1) * l + types,
            Layout::HetTeacher => (l + 1) * types,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Layout::HomoStudent,
            Layout::HomoTeacher,
            Layout::HetStudent,
            Layout::HetTeacher,
        ]
        .into_iter()
        .find(|l| l.as_str() == s)
        .ok_or_else(|| Error::parse("layout", format!("unknown layout `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn homo_one_hot(outcome: SlotOutcome) -> Result<[f64; 3]> {
    match outcome {
        SlotOutcome::Empty => Ok([1.0, 0.0, 0.0]),
        SlotOutcome::Single => Ok([0.0, 1.0, 0.0]),
        SlotOutcome::Collision => Ok([0.0, 0.0, 1.0]),
        other => Err(Error::arg(format!(
            "outcome `{}` is not part of the homogeneous alphabet",
            other.as_str()
        ))),
    }
}

fn het_one_hot(outcome: SlotOutcome) -> Result<[f64; 4]> {
    match outcome {
        SlotOutcome::Empty => Ok([1.0, 0.0, 0.0, 0.0]),
        SlotOutcome::Alpha => Ok([0.0, 1.0, 0.0, 0.0]),
        SlotOutcome::Beta => Ok([0.0, 0.0, 1.0, 0.0]),
        SlotOutcome::Collision => Ok([0.0, 0.0, 0.0, 1.0]),
        SlotOutcome::Single => Err(Error::arg(
            "outcome `single` is not part of the heterogeneous alphabet",
        )),
    }
}

fn check_scale(n_max: f64) -> Result<()> {
    if n_max > 0.0 && n_max.is_finite() {
        Ok(())
    } else {
        Err(Error::arg(format!("population bound must be positive, got {n_max}")))
    }
}

pub fn encode_bb_student(
    outcomes: &[SlotOutcome],
    prev_estimate: f64,
    n_max: f64,
) -> Result<FeatureVector> {
    check_scale(n_max)?;
    let mut values = Vec::with_capacity(3 * outcomes.len() + 1);
    for &o in outcomes {
        values.extend(homo_one_hot(o)?);
    }
    values.push(prev_estimate / n_max);
    Ok(FeatureVector {
        values,
        layout: Layout::HomoStudent,
    })
}

/// `prev_truth` is real-valued so that the LoF estimate can stand in for it at frame 0.
pub fn encode_bb_teacher(counts: &[u32], prev_truth: f64, n_max: f64) -> Result<FeatureVector> {
    check_scale(n_max)?;
    let mut values: Vec<f64> = counts.iter().map(|&c| c as f64 / n_max).collect();
    values.push(prev_truth / n_max);
    Ok(FeatureVector {
        values,
        layout: Layout::HomoTeacher,
    })
}

/// `outcomes` are block-major with `types - 1` slots per block.
pub fn encode_3ssbb_student(
    outcomes: &[SlotOutcome],
    prev_estimates: &[f64],
    n_max: f64,
) -> Result<FeatureVector> {
    check_scale(n_max)?;
    let types = prev_estimates.len();
    if types < 2 {
        return Err(Error::arg("heterogeneous encoding needs at least 2 types"));
    }
    if outcomes.len() % (types - 1) != 0 {
        return Err(Error::arg(format!(
            "{} outcomes do not form whole blocks of {} slots",
            outcomes.len(),
            types - 1
        )));
    }
    let mut values = Vec::with_capacity(4 * outcomes.len() + types);
    for &o in outcomes {
        values.extend(het_one_hot(o)?);
    }
    values.extend(prev_estimates.iter().map(|&e| e / n_max));
    Ok(FeatureVector {
        values,
        layout: Layout::HetStudent,
    })
}

/// `type_counts` are block-major with one entry per type.
pub fn encode_3ssbb_teacher(
    type_counts: &[u32],
    prev_truths: &[f64],
    n_max: f64,
) -> Result<FeatureVector> {
    check_scale(n_max)?;
    let types = prev_truths.len();
    if types == 0 || type_counts.len() % types != 0 {
        return Err(Error::arg(format!(
            "{} counts do not form whole blocks of {types} types",
            type_counts.len()
        )));
    }
    let mut values: Vec<f64> = type_counts.iter().map(|&c| c as f64 / n_max).collect();
    values.extend(prev_truths.iter().map(|&t| t / n_max));
    Ok(FeatureVector {
        values,
        layout: Layout::HetTeacher,
    })
}

/// Writes a `# layout: <tag>` header line, a column header, then one row per vector.
pub fn write_features_csv<W: Write>(vectors: &[FeatureVector], mut writer: W) -> Result<()> {
    let Some(first) = vectors.first() else {
        return Ok(());
    };
    if vectors.iter().any(|v| v.layout != first.layout || v.len() != first.len()) {
        return Err(Error::arg("all vectors in one file must share a layout and length"));
    }
    writeln!(writer, "# layout: {}", first.layout)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record((0..first.len()).map(|i| format!("x{i}")))?;
    for v in vectors {
        w.write_record(v.values.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv<R: Read>(reader: R) -> Result<Vec<FeatureVector>> {
    let mut text = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let (first_line, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let layout: Layout = first_line
        .strip_prefix("# layout: ")
        .ok_or_else(|| Error::parse("line 1", "missing `# layout:` header"))?
        .trim()
        .parse()?;
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let values = record
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(format!("row {}", i + 1), e))?;
        out.push(FeatureVector { values, layout });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{run_3ssbb, run_bb};
    use crate::seed::rng_from;
    use proptest::prelude::*;
    use SlotOutcome::*;

    /// Test-only inverse of the student encoders.
    fn decode_student(v: &FeatureVector, group: usize, alphabet: &[SlotOutcome], tail: usize) -> Vec<SlotOutcome> {
        let body = &v.values[..v.len() - tail];
        body.chunks(group)
            .map(|g| {
                assert!((g.iter().sum::<f64>() - 1.0).abs() == 0.0);
                alphabet[g.iter().position(|&x| x == 1.0).unwrap()]
            })
            .collect()
    }

    #[test]
    fn homo_student_layout() {
        let v = encode_bb_student(&[Empty, Collision], 32.0, 64.0).unwrap();
        assert_eq!(v.values, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5]);
        let v = encode_bb_student(&[Empty; 4], 0.0, 64.0).unwrap();
        assert_eq!(v.values, vec![1., 0., 0., 1., 0., 0., 1., 0., 0., 1., 0., 0., 0.]);
    }

    #[test]
    fn homo_student_rejects_symbols() {
        assert!(matches!(
            encode_bb_student(&[Empty, Alpha], 1.0, 64.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn homo_teacher_layout() {
        let v = encode_bb_teacher(&[0, 2, 1], 4.0, 64.0).unwrap();
        assert_eq!(v.values, vec![0.0, 2.0 / 64.0, 1.0 / 64.0, 4.0 / 64.0]);
        let z = encode_bb_teacher(&[0; 9], 0.0, 64.0).unwrap();
        assert_eq!(z.len(), 10);
        assert!(z.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn het_student_layout() {
        let v = encode_3ssbb_student(&[Alpha], &[3.0, 5.0], 96.0).unwrap();
        assert_eq!(v.values, vec![0.0, 1.0, 0.0, 0.0, 3.0 / 96.0, 5.0 / 96.0]);
        let e = encode_3ssbb_student(&[Empty; 6], &[0.0; 3], 64.0).unwrap();
        assert_eq!(&e.values[..4], &[1.0, 0.0, 0.0, 0.0]);
        assert!(encode_3ssbb_student(&[Single], &[0.0, 0.0], 96.0).is_err());
        assert!(encode_3ssbb_student(&[Empty; 3], &[0.0; 3], 96.0).is_err());
    }

    #[test]
    fn het_teacher_layout() {
        let v = encode_3ssbb_teacher(&[2, 0], &[4.0, 1.0], 96.0).unwrap();
        assert_eq!(v.values, vec![2.0 / 96.0, 0.0, 4.0 / 96.0, 1.0 / 96.0]);
        assert!(encode_3ssbb_teacher(&[1, 2, 3], &[0.0, 0.0], 96.0).is_err());
    }

    #[test]
    fn layout_lengths() {
        assert_eq!(Layout::HomoStudent.len(100, 1), 301);
        assert_eq!(Layout::HomoTeacher.len(100, 1), 101);
        assert_eq!(Layout::HetStudent.len(100, 3), 803);
        assert_eq!(Layout::HetTeacher.len(100, 3), 303);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = rng_from(3);
        let vs: Vec<FeatureVector> = (0..5)
            .map(|i| {
                let t = run_bb(20, 10, 20.0, &mut rng);
                encode_bb_teacher(&t.counts, i as f64 / 3.0, 64.0).unwrap()
            })
            .collect();
        let mut buf = Vec::new();
        write_features_csv(&vs, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("# layout: homo_teacher\n"));
        assert_eq!(read_features_csv(buf.as_slice()).unwrap(), vs);
        assert!(read_features_csv("x0\n1\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn homo_student_decodes_and_sums(n in 0u32..100, l in 1usize..60, seed in any::<u64>(), prev in 0.0f64..64.0) {
            let t = run_bb(n, l, n.max(1) as f64, &mut rng_from(seed));
            let v = encode_bb_student(&t.outcomes, prev, 64.0).unwrap();
            prop_assert_eq!(v.len(), Layout::HomoStudent.len(l, 1));
            prop_assert_eq!(decode_student(&v, 3, &[Empty, Single, Collision], 1), t.outcomes);
            prop_assert_eq!(*v.values.last().unwrap(), prev / 64.0);
        }

        #[test]
        fn het_encoders_decode_and_have_fixed_length(types in 2usize..6, l in 1usize..30, seed in any::<u64>()) {
            let n: Vec<u32> = (0..types as u32).map(|b| 3 * b + 1).collect();
            let rough: Vec<f64> = n.iter().map(|&x| x as f64).collect();
            let t = run_3ssbb(&n, l, &rough, &mut rng_from(seed)).unwrap();
            let s = encode_3ssbb_student(&t.outcomes, &rough, 64.0).unwrap();
            prop_assert_eq!(s.len(), 4 * (types - 1) * l + types);
            prop_assert_eq!(decode_student(&s, 4, &[Empty, Alpha, Beta, Collision], types), t.outcomes);
            let tv = encode_3ssbb_teacher(&t.type_counts, &rough, 64.0).unwrap();
            prop_assert_eq!(tv.len(), (l + 1) * types);
            prop_assert!(tv.values.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
