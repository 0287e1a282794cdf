//! On-disk formats.
//!
//! * prediction stream: CSV `frame,prob`, frames dense from 0
//! * ground truth: CSV `event_frame` plus a `<name>.meta` sidecar holding
//!   `total_frames=<n>` (key=value lines)
//! * turn spans: CSV `start_s,end_s,speaker,text`
//! * ICC responses: CSV `participant_id,response_frame`

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ingest::{ParticipantResponses, Speaker, TurnSpan};
use crate::timeline::{FrameStream, GroundTruth};

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn row_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Row {
        path: path.display().to_string(),
        row: line as usize,
        message: message.into(),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => row_error(path, line, format!("{kind:?}")),
    }
}

fn check_header(path: &Path, rdr: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(row_error(
            path,
            1,
            format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn field<'r>(path: &Path, rec: &'r csv::StringRecord, idx: usize, name: &str) -> Result<&'r str> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    rec.get(idx)
        .ok_or_else(|| row_error(path, line, format!("missing column `{name}`")))
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<T> {
    let raw = field(path, rec, idx, name)?;
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    raw.parse()
        .map_err(|_| row_error(path, line, format!("cannot parse `{name}` value `{raw}`")))
}

/// Loads a `frame,prob` stream. Rows must be dense from frame 0.
pub fn load_prediction_stream(path: impl AsRef<Path>, frame_rate: u32) -> Result<FrameStream> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["frame", "prob"])?;
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let frame: usize = parse_field(path, &rec, 0, "frame")?;
        let prob: f64 = parse_field(path, &rec, 1, "prob")?;
        if frame != values.len() {
            return Err(Error::NonDenseFrames {
                path: path.display().to_string(),
                missing: values.len(),
            });
        }
        if !(0.0..=1.0).contains(&prob) {
            return Err(row_error(
                path,
                line,
                format!("probability {prob} is outside [0, 1]"),
            ));
        }
        values.push(prob);
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FrameStream::new(frame_rate, values, id)
}

pub fn store_prediction_stream(stream: &FrameStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| csv_error(path, e);
    w.write_record(["frame", "prob"]).map_err(io)?;
    for (f, v) in stream.values().iter().enumerate() {
        w.write_record([f.to_string(), v.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `foo.csv` -> `foo.meta`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

pub fn read_meta(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text, path)
}

pub(crate) fn parse_key_values(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| row_error(path, i as u64 + 1, "expected key=value"))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let meta_file = meta_path(path);
    let meta = read_meta(&meta_file)?;
    let total_frames: usize = meta
        .get("total_frames")
        .ok_or_else(|| row_error(&meta_file, 0, "missing key `total_frames`"))?
        .parse()
        .map_err(|_| row_error(&meta_file, 0, "`total_frames` is not a count"))?;

    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["event_frame"])?;
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        events.push(parse_field::<usize>(path, &rec, 0, "event_frame")?);
    }
    GroundTruth::new(events, total_frames)
        .map_err(|e| row_error(path, 0, e.to_string()))
}

pub fn store_ground_truth(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| csv_error(path, e);
    w.write_record(["event_frame"]).map_err(io)?;
    for e in truth.events() {
        w.write_record([e.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = meta_path(path);
    fs::write(&meta, format!("total_frames={}\n", truth.total_frames()))
        .map_err(|e| Error::io(meta, e))
}

pub fn load_turn_spans(path: impl AsRef<Path>) -> Result<Vec<TurnSpan>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["start_s", "end_s", "speaker", "text"])?;
    let mut spans = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let speaker = field(path, &rec, 2, "speaker")?;
        spans.push(TurnSpan {
            start_s: parse_field(path, &rec, 0, "start_s")?,
            end_s: parse_field(path, &rec, 1, "end_s")?,
            speaker: Speaker::parse(speaker)
                .ok_or_else(|| row_error(path, line, format!("unknown speaker `{speaker}`")))?,
            text: field(path, &rec, 3, "text")?.to_string(),
        });
    }
    Ok(spans)
}

pub fn store_turn_spans(spans: &[TurnSpan], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| csv_error(path, e);
    w.write_record(["start_s", "end_s", "speaker", "text"])
        .map_err(io)?;
    for s in spans {
        w.write_record([
            s.start_s.to_string(),
            s.end_s.to_string(),
            s.speaker.as_str().to_string(),
            s.text.clone(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `participant_id,response_frame` rows. Participants are counted from
/// the distinct ids unless `n_participants` is given (participants who never
/// responded still count towards the agreement denominator).
pub fn load_icc_responses(
    path: impl AsRef<Path>,
    n_participants: Option<usize>,
) -> Result<ParticipantResponses> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["participant_id", "response_frame"])?;
    let mut by_participant: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let id = field(path, &rec, 0, "participant_id")?.to_string();
        let frame: usize = parse_field(path, &rec, 1, "response_frame")?;
        by_participant.entry(id).or_default().push(frame);
    }
    let distinct = by_participant.len();
    let n = n_participants.unwrap_or(distinct);
    if n < distinct {
        return Err(Error::invalid(format!(
            "{}: {distinct} distinct participants but --participants is {n}",
            path.display()
        )));
    }
    ParticipantResponses::new(n, by_participant.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stream_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let values: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let s = FrameStream::new(50, values, "s").unwrap();
        store_prediction_stream(&s, &path).unwrap();
        let back = load_prediction_stream(&path, 50).unwrap();
        assert_eq!(back.values().len(), 100);
        for (a, b) in s.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn stream_rejects_out_of_range_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "frame,prob\n0,0.5\n1,1.5\n").unwrap();
        match load_prediction_stream(&path, 50) {
            Err(Error::Row { row, message, .. }) => {
                assert_eq!(row, 3);
                assert!(message.contains("1.5"));
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn stream_rejects_gap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "frame,prob\n0,0.5\n1,0.5\n3,0.5\n").unwrap();
        match load_prediction_stream(&path, 50) {
            Err(Error::NonDenseFrames { missing, .. }) => assert_eq!(missing, 2),
            other => panic!("expected density error, got {other:?}"),
        }
    }

    #[test]
    fn ground_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.truth.csv");
        let t = GroundTruth::new(vec![3, 99, 250], 400).unwrap();
        store_ground_truth(&t, &path).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join("rec.truth.meta")).unwrap(),
            "total_frames=400\n"
        );
        assert_eq!(load_ground_truth(&path).unwrap(), t);
    }

    #[test]
    fn turn_spans_round_trip_with_commas_and_quotes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.spans.csv");
        let spans = vec![
            TurnSpan {
                start_s: 0.0,
                end_s: 2.0,
                speaker: Speaker::User,
                text: "well, I \"think\" so".into(),
            },
            TurnSpan {
                start_s: 4.0,
                end_s: 5.4,
                speaker: Speaker::Assistant,
                text: "ok".into(),
            },
        ];
        store_turn_spans(&spans, &path).unwrap();
        assert_eq!(load_turn_spans(&path).unwrap(), spans);
    }

    #[test]
    fn icc_responses_group_by_participant() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        fs::write(&path, "participant_id,response_frame\np1,500\np2,505\np1,900\n").unwrap();
        let r = load_icc_responses(&path, None).unwrap();
        assert_eq!(r.n_participants(), 2);
        assert_eq!(r.responses(), &[vec![500, 900], vec![505]]);
        let r = load_icc_responses(&path, Some(10)).unwrap();
        assert_eq!(r.n_participants(), 10);
        assert!(load_icc_responses(&path, Some(1)).is_err());
    }

    proptest! {
        #[test]
        fn stream_round_trip_any_probabilities(values in proptest::collection::vec(0.0f64..=1.0, 0..200)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.csv");
            let s = FrameStream::new(50, values, "p").unwrap();
            store_prediction_stream(&s, &path).unwrap();
            let back = load_prediction_stream(&path, 50).unwrap();
            prop_assert_eq!(back.values(), s.values());
        }
    }
}
