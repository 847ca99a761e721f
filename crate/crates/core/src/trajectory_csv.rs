//! Trajectory CSV: header `track_id,t,x,y`, one observation per row, rows
//! grouped by track and sorted by time within a track.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Track, TrackPoint};

pub const HEADER: [&str; 4] = ["track_id", "t", "x", "y"];

/// Parses trajectory CSV text. `source_name` only labels error messages.
pub fn parse_tracks<R: Read>(reader: R, source_name: &str) -> Result<Vec<Track>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        source_name: source_name.to_owned(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);

    let mut records = rdr.records();
    match records.next() {
        None => return Err(parse_err(1, "missing header".into())),
        Some(Err(e)) => return Err(parse_err(1, e.to_string())),
        Some(Ok(h)) if h.iter().map(str::trim).ne(HEADER) => {
            return Err(parse_err(
                1,
                format!("expected header `{}`", HEADER.join(",")),
            ));
        }
        Some(Ok(_)) => {}
    }

    let mut tracks: Vec<Track> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut current: Option<(String, Vec<TrackPoint>)> = None;
    let mut finish = |cur: Option<(String, Vec<TrackPoint>)>, line: u64| -> Result<()> {
        if let Some((id, pts)) = cur {
            let track = Track::new(id, pts).map_err(|e| parse_err(line, e.to_string()))?;
            tracks.push(track);
        }
        Ok(())
    };

    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(parse_err(
                line,
                format!("expected 4 fields, found {}", rec.len()),
            ));
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(parse_err(line, "empty track_id".into()));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = rec[i].trim().parse().map_err(|_| {
                parse_err(
                    line,
                    format!("`{}` is not a number in column {}", &rec[i], HEADER[i]),
                )
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(
                    line,
                    format!("non-finite value in column {}", HEADER[i]),
                ))
            }
        };
        let point = TrackPoint::new(num(1)?, num(2)?, num(3)?);

        match &mut current {
            Some((cur_id, pts)) if cur_id == id => {
                if point.t <= pts[pts.len() - 1].t {
                    return Err(parse_err(
                        line,
                        format!("track `{id}` timestamps not strictly increasing"),
                    ));
                }
                pts.push(point);
            }
            _ => {
                if !seen.insert(id.to_owned()) {
                    return Err(parse_err(
                        line,
                        format!("rows of track `{id}` are not contiguous"),
                    ));
                }
                finish(current.take(), line)?;
                current = Some((id.to_owned(), vec![point]));
            }
        }
    }
    let end_line = rdr.position().line();
    finish(current.take(), end_line)?;
    Ok(tracks)
}

pub fn read_tracks(path: &Path) -> Result<Vec<Track>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tracks(std::io::BufReader::new(file), &path.display().to_string())
}

pub fn write_tracks<W: Write>(writer: W, tracks: &[Track]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for track in tracks {
        for p in track.points() {
            w.write_record([
                track.id().to_owned(),
                p.t.to_string(),
                p.x.to_string(),
                p.y.to_string(),
            ])?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_grouped_tracks() {
        let text = "track_id,t,x,y\na,0,0,0\na,0.1,1,0\nb,0,5,5\nb,0.5,5,6\nb,1.0,5,7\n";
        let tracks = parse_tracks(text.as_bytes(), "mem").unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].id(), "a");
        assert_eq!(tracks[1].len(), 3);
        assert_eq!(tracks[1].points()[2], TrackPoint::new(1.0, 5.0, 7.0));
    }

    #[test]
    fn reports_line_numbers() {
        let cases = [
            ("track_id,t,x,y\na,0,0,0\na,zz,1,0\n", 3),
            ("track_id,t,x,y\na,0,0,0\na,0.1,1\n", 3),
            (
                "track_id,t,x,y\na,0,0,0\na,0.1,1,0\nb,0,0,0\nb,1,0,0\na,1,1,1\n",
                6,
            ),
            ("track_id,t,x,y\na,0,0,0\na,0,1,0\n", 3),
            ("track_id,t,x,y\na,0,0,0\na,1,inf,0\n", 3),
            ("id,t,x,y\n", 1),
        ];
        for (text, line) in cases {
            match parse_tracks(text.as_bytes(), "mem") {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn single_sample_track_is_rejected() {
        let err = parse_tracks("track_id,t,x,y\na,0,0,0\n".as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse_tracks("track_id,t,x,y\n".as_bytes(), "mem")
            .unwrap()
            .is_empty());
        assert!(parse_tracks("".as_bytes(), "mem").is_err());
    }

    proptest! {
        #[test]
        fn write_then_parse_roundtrips(
            tracks in prop::collection::vec(
                prop::collection::vec((0.001..1.0f64, -1e4..1e4f64, -1e4..1e4f64), 2..20), 0..5)
        ) {
            let tracks: Vec<Track> = tracks
                .into_iter()
                .enumerate()
                .map(|(i, pts)| {
                    let mut t = 0.0;
                    let pts = pts.into_iter().map(|(dt, x, y)| { t += dt; TrackPoint::new(t, x, y) }).collect();
                    Track::new(format!("trk{i}"), pts).unwrap()
                })
                .collect();
            let mut buf = Vec::new();
            write_tracks(&mut buf, &tracks).unwrap();
            prop_assert_eq!(parse_tracks(buf.as_slice(), "mem").unwrap(), tracks);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let mut text = b"track_id,t,x,y\n".to_vec();
            text.extend(bytes);
            let _ = parse_tracks(text.as_slice(), "fuzz");
        }
    }
}
