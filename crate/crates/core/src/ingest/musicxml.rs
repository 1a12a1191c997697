//! Restricted partwise MusicXML reader.
//!
//! Supported: `divisions`, `backup`/`forward`, `chord`, ties, grace notes
//! (skipped), cue notes (skipped), one two-staff part or two single-hand parts,
//! and the first tempo marking. Repeats are not expanded.

use std::collections::HashMap;

use roxmltree::{Document, Node, ParsingOptions};

use super::quantize;
use crate::error::{Error, Result};
use crate::score::{Beats, Hand, NoteEvent, Piece, Pitch};

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn child_text<'a>(node: Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(node, name).and_then(|c| c.text()).map(str::trim)
}

fn parse_pitch(pitch: Node, measure: &str) -> Result<Pitch> {
    let field = |f: &str| format!("measure {measure} pitch/{f}");
    let step = match child_text(pitch, "step") {
        Some("C") => 0,
        Some("D") => 2,
        Some("E") => 4,
        Some("F") => 5,
        Some("G") => 7,
        Some("A") => 9,
        Some("B") => 11,
        other => return Err(Error::parse(field("step"), format!("invalid step {other:?}"))),
    };
    let alter = match child_text(pitch, "alter") {
        Some(a) => a
            .parse::<f64>()
            .map_err(|e| Error::parse(field("alter"), e.to_string()))?
            .round() as i64,
        None => 0,
    };
    let octave = child_text(pitch, "octave")
        .ok_or_else(|| Error::parse(field("octave"), "missing"))?
        .parse::<i64>()
        .map_err(|e| Error::parse(field("octave"), e.to_string()))?;
    let midi = (octave + 1) * 12 + step + alter;
    Pitch::new(midi).map_err(|_| Error::parse(field("octave"), format!("pitch out of range: {midi}")))
}

fn parse_divisions(text: Option<&str>, measure: &str) -> Result<i64> {
    let field = format!("measure {measure} divisions");
    let text = text.ok_or_else(|| Error::parse(&field, "missing"))?;
    let d = text
        .parse::<f64>()
        .map_err(|e| Error::parse(&field, e.to_string()))?;
    if !(d.is_finite() && d >= 1.0 && d.fract() == 0.0) {
        return Err(Error::parse(&field, format!("invalid divisions {text}")));
    }
    Ok(d as i64)
}

fn duration_of(node: Node, divisions: Option<i64>, measure: &str) -> Result<Beats> {
    let divisions = divisions
        .ok_or_else(|| Error::parse(format!("measure {measure} divisions"), "duration before divisions"))?;
    let text = child_text(node, "duration")
        .ok_or_else(|| Error::parse(format!("measure {measure} duration"), "missing"))?;
    let d = text
        .parse::<f64>()
        .map_err(|e| Error::parse(format!("measure {measure} duration"), e.to_string()))?;
    if !d.is_finite() || d < 0.0 {
        return Err(Error::parse(format!("measure {measure} duration"), format!("invalid {text}")));
    }
    if d.fract() == 0.0 {
        Ok(Beats::new(d as i64, divisions))
    } else {
        Ok(super::quantize_f64(d / divisions as f64))
    }
}

/// Quarter-note tempo from the first `sound@tempo` or `metronome` in document order.
fn first_tempo(doc: &Document) -> Option<f64> {
    for node in doc.descendants() {
        if node.has_tag_name("sound") {
            if let Some(t) = node.attribute("tempo").and_then(|t| t.trim().parse::<f64>().ok()) {
                if t.is_finite() && t > 0.0 {
                    return Some(t);
                }
            }
        }
        if node.has_tag_name("metronome") {
            let per_minute = child_text(node, "per-minute").and_then(|t| t.parse::<f64>().ok());
            let unit = match child_text(node, "beat-unit") {
                Some("whole") => 4.0,
                Some("half") => 2.0,
                Some("quarter") => 1.0,
                Some("eighth") => 0.5,
                Some("16th") => 0.25,
                Some("32nd") => 0.125,
                _ => continue,
            };
            let dots = node.children().filter(|c| c.has_tag_name("beat-unit-dot")).count();
            let unit = unit * (2.0 - 0.5f64.powi(dots as i32));
            if let Some(pm) = per_minute.filter(|p| p.is_finite() && *p > 0.0) {
                return Some(pm * unit);
            }
        }
    }
    None
}

/// Notes of one hand being assembled, with open ties keyed by pitch.
#[derive(Default)]
struct Stream {
    notes: Vec<NoteEvent>,
    open_ties: HashMap<Pitch, usize>,
}

impl Stream {
    fn push(&mut self, pitch: Pitch, onset: Beats, duration: Beats, tie_start: bool, tie_stop: bool) -> Result<()> {
        if tie_stop {
            if let Some(idx) = self.open_ties.get(&pitch).copied() {
                self.notes[idx].duration_beats += duration;
                if !tie_start {
                    self.open_ties.remove(&pitch);
                }
                return Ok(());
            }
        }
        let onset = quantize(onset);
        let duration = quantize(duration).max(Beats::new(1, super::TICKS_PER_QUARTER));
        self.notes.push(NoteEvent::new(pitch, onset, duration)?);
        if tie_start {
            self.open_ties.insert(pitch, self.notes.len() - 1);
        }
        Ok(())
    }
}

/// Parse a partwise MusicXML document into a two-hand piece named `id`.
pub fn parse_musicxml(bytes: &[u8], id: &str) -> Result<Piece> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse("document", e.to_string()))?;
    let options = ParsingOptions {
        allow_dtd: true,
        ..ParsingOptions::default()
    };
    let doc = Document::parse_with_options(text, options).map_err(|e| Error::parse("document", e.to_string()))?;
    let root = doc.root_element();
    if !root.has_tag_name("score-partwise") {
        return Err(Error::UnsupportedLayout(format!(
            "root element <{}> (only score-partwise is supported)",
            root.tag_name().name()
        )));
    }
    let parts: Vec<Node> = root.children().filter(|c| c.has_tag_name("part")).collect();
    if parts.is_empty() || parts.len() > 2 {
        return Err(Error::UnsupportedLayout(format!(
            "{} parts (expected one two-staff part or two parts)",
            parts.len()
        )));
    }
    let single_part = parts.len() == 1;

    // (right, left)
    let mut streams = [Stream::default(), Stream::default()];
    let mut max_staff = 1;

    for (part_index, part) in parts.iter().enumerate() {
        let mut divisions: Option<i64> = None;
        let mut measure_start = Beats::from_integer(0);
        for measure in part.children().filter(|c| c.has_tag_name("measure")) {
            let number = measure.attribute("number").unwrap_or("?").to_string();
            let mut cursor = measure_start;
            let mut measure_end = measure_start;
            let mut last_onset = measure_start;
            for el in measure.children().filter(Node::is_element) {
                match el.tag_name().name() {
                    "attributes" => {
                        if let Some(d) = child(el, "divisions") {
                            divisions = Some(parse_divisions(d.text().map(str::trim), &number)?);
                        }
                        if let Some(s) = child_text(el, "staves") {
                            let staves = s.parse::<usize>().map_err(|e| {
                                Error::parse(format!("measure {number} staves"), e.to_string())
                            })?;
                            max_staff = max_staff.max(staves);
                        }
                    }
                    "backup" => {
                        cursor -= duration_of(el, divisions, &number)?;
                        if cursor < measure_start {
                            return Err(Error::parse(format!("measure {number} backup"), "moves before measure start"));
                        }
                    }
                    "forward" => {
                        cursor += duration_of(el, divisions, &number)?;
                        measure_end = measure_end.max(cursor);
                    }
                    "note" => {
                        if child(el, "grace").is_some() {
                            continue;
                        }
                        let duration = duration_of(el, divisions, &number)?;
                        let onset = if child(el, "chord").is_some() {
                            last_onset
                        } else {
                            let onset = cursor;
                            cursor += duration;
                            measure_end = measure_end.max(cursor);
                            onset
                        };
                        last_onset = onset;
                        if child(el, "cue").is_some() || child(el, "rest").is_some() {
                            continue;
                        }
                        let Some(pitch_node) = child(el, "pitch") else {
                            continue;
                        };
                        let pitch = parse_pitch(pitch_node, &number)?;
                        let staff = match child_text(el, "staff") {
                            Some(s) => s.parse::<usize>().map_err(|e| {
                                Error::parse(format!("measure {number} staff"), e.to_string())
                            })?,
                            None => 1,
                        };
                        max_staff = max_staff.max(staff);
                        let hand = if single_part {
                            match staff {
                                1 => 0,
                                2 => 1,
                                _ => {
                                    return Err(Error::UnsupportedLayout(format!(
                                        "staff {staff} in a single-part score"
                                    )))
                                }
                            }
                        } else {
                            part_index
                        };
                        let ties: Vec<&str> = el
                            .children()
                            .filter(|c| c.has_tag_name("tie"))
                            .filter_map(|c| c.attribute("type"))
                            .collect();
                        streams[hand].push(
                            pitch,
                            onset,
                            duration,
                            ties.contains(&"start"),
                            ties.contains(&"stop"),
                        )?;
                    }
                    _ => {}
                }
            }
            measure_start = measure_end;
        }
    }

    if single_part && max_staff != 2 {
        return Err(Error::UnsupportedLayout(format!(
            "single part with {max_staff} staff/staves (expected 2)"
        )));
    }
    let [right, left] = streams;
    for (notes, hand) in [(&right.notes, Hand::Right), (&left.notes, Hand::Left)] {
        if notes.is_empty() {
            return Err(Error::EmptyPart(hand));
        }
    }
    let mut piece = Piece::new(id, right.notes, left.notes);
    piece.tempo_bpm = first_tempo(&doc);
    Ok(piece)
}
