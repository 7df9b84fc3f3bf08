//! ASCII-art header diagram detection and parsing.
//!
//! The standard ruler geometry (`+-+-+-...`) devotes two character cells to
//! each bit, so a cell of character length L spans (L + 1) / 2 bits. Rows
//! are 32 bits wide; a cell spanning several content rows between two rulers
//! (a repeated name or a blank continuation) merges into one field.

use thiserror::Error;

use crate::corpus::RfcDocument;

#[derive(Debug, Error)]
pub enum DiagramError {
    #[error("malformed row at line {line}: cell {cell:?} has even character length {len}")]
    MalformedRow { line: usize, cell: String, len: usize },
}

/// A named bit-span parsed from a header diagram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderField {
    pub name: String,
    pub bit_offset: usize,
    pub bit_width: usize,
    pub rfc_number: u32,
    pub diagram_index: usize,
}

#[derive(Debug, Clone)]
pub struct HeaderDiagram {
    pub rfc_number: u32,
    pub diagram_index: usize,
    /// Line range in the cleaned document, inclusive.
    pub start_line: usize,
    pub end_line: usize,
    pub rows: Vec<String>,
    pub fields: Vec<HeaderField>,
    /// Set when any cell carries a `...` continuation marker.
    pub variable_length: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Ruler,
    Content,
    Caption,
    Other,
}

fn classify(line: &str) -> RowKind {
    let t = line.trim();
    if t.len() >= 2
        && t.starts_with('+')
        && t.ends_with('+')
        && t.chars().all(|c| c == '+' || c == '-')
    {
        return RowKind::Ruler;
    }
    if t.len() >= 2 && t.starts_with('|') && t.ends_with('|') {
        return RowKind::Content;
    }
    if !t.is_empty() && t.chars().all(|c| c.is_ascii_digit() || c == ' ') {
        return RowKind::Caption;
    }
    RowKind::Other
}

/// Finds maximal diagram regions: runs of ruler/content rows holding at
/// least two rulers with at least one content row between them. Bit-index
/// caption lines directly above the first ruler are kept in `rows` but are
/// never parsed as cells.
pub fn detect_diagrams(doc: &RfcDocument) -> Vec<HeaderDiagram> {
    let kinds: Vec<RowKind> = doc.lines.iter().map(|l| classify(l)).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < doc.lines.len() {
        if kinds[i] != RowKind::Ruler {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i;
        let mut rulers = 0;
        let mut contents_bracketed = 0;
        let mut seen_first_ruler = false;
        let mut j = i;
        while j < doc.lines.len() {
            match kinds[j] {
                RowKind::Ruler => {
                    rulers += 1;
                    seen_first_ruler = true;
                    end = j;
                }
                RowKind::Content if seen_first_ruler => {
                    contents_bracketed += 1;
                    end = j;
                }
                _ => break,
            }
            j += 1;
        }
        // The region runs from the first ruler to the last ruler/content
        // row; at least one content row must sit strictly between rulers.
        let last_ruler = (start..=end).rev().find(|&k| kinds[k] == RowKind::Ruler).unwrap_or(start);
        let bracketed = (start..last_ruler).any(|k| kinds[k] == RowKind::Content);
        if rulers >= 2 && contents_bracketed >= 1 && bracketed {
            // absorb up to two bit-index caption lines directly above
            let mut first = start;
            while first > 0 && start - first < 2 && kinds[first - 1] == RowKind::Caption {
                first -= 1;
            }
            let rows = doc.lines[first..=end].to_vec();
            out.push(HeaderDiagram {
                rfc_number: doc.rfc_number,
                diagram_index: out.len(),
                start_line: first,
                end_line: end,
                rows,
                fields: Vec::new(),
                variable_length: false,
            });
        }
        i = j.max(i + 1);
    }
    out
}

struct Cell {
    text: String,
    width: usize,
}

fn split_cells(row: &str, line: usize) -> Result<Vec<Cell>, DiagramError> {
    let t = row.trim();
    let inner: Vec<&str> = t[1..t.len() - 1].split('|').collect();
    let mut cells = Vec::with_capacity(inner.len());
    for c in inner {
        let len = c.chars().count();
        if (len + 1) % 2 != 0 {
            return Err(DiagramError::MalformedRow { line, cell: c.to_string(), len });
        }
        cells.push(Cell { text: c.trim().to_string(), width: (len + 1) / 2 });
    }
    Ok(cells)
}

/// Parses one `|`-delimited content row into fields, offsets counted from
/// `row_bit_base`. Unnamed cells get a synthesized `unnamed@<offset>` name.
pub fn parse_row(row: &str, row_bit_base: usize) -> Result<Vec<HeaderField>, DiagramError> {
    parse_row_at(row, row_bit_base, 0, 0, 0)
}

fn parse_row_at(
    row: &str,
    row_bit_base: usize,
    line: usize,
    rfc_number: u32,
    diagram_index: usize,
) -> Result<Vec<HeaderField>, DiagramError> {
    let cells = split_cells(row, line)?;
    let mut fields = Vec::with_capacity(cells.len());
    let mut offset = row_bit_base;
    for cell in cells {
        let name = if cell.text.is_empty() {
            format!("unnamed@{offset}")
        } else {
            cell.text
        };
        fields.push(HeaderField {
            name,
            bit_offset: offset,
            bit_width: cell.width,
            rfc_number,
            diagram_index,
        });
        offset += cell.width;
    }
    Ok(fields)
}

/// Populates `fields` for a detected diagram. Content rows between two
/// rulers form a group; aligned multi-row groups merge column-wise with the
/// bit width spanning all rows of the group. The running bit base advances
/// 32 bits per content row.
pub fn parse_diagram(d: &HeaderDiagram) -> Result<HeaderDiagram, DiagramError> {
    let mut out = d.clone();
    let mut fields = Vec::new();
    let mut base = 0usize;
    let mut variable = false;

    let mut group: Vec<(usize, Vec<Cell>)> = Vec::new(); // (line number, cells)
    let flush = |group: &mut Vec<(usize, Vec<Cell>)>,
                     base: &mut usize,
                     fields: &mut Vec<HeaderField>| {
        if group.is_empty() {
            return;
        }
        let r = group.len();
        let aligned = r > 1
            && group.windows(2).all(|w| {
                w[0].1.len() == w[1].1.len()
                    && w[0].1.iter().zip(&w[1].1).all(|(a, b)| a.width == b.width)
            });
        if aligned {
            let ncells = group[0].1.len();
            let mut offset = *base;
            for k in 0..ncells {
                let width: usize = group[0].1[k].width * r;
                let mut names: Vec<&str> = Vec::new();
                for (_, cells) in group.iter() {
                    let t = cells[k].text.as_str();
                    if !t.is_empty() && names.last() != Some(&t) {
                        names.push(t);
                    }
                }
                let name = if names.is_empty() {
                    format!("unnamed@{offset}")
                } else {
                    names.join(" ")
                };
                fields.push(HeaderField {
                    name,
                    bit_offset: offset,
                    bit_width: width,
                    rfc_number: d.rfc_number,
                    diagram_index: d.diagram_index,
                });
                offset += width;
            }
        } else {
            let mut row_base = *base;
            for (_, cells) in group.iter() {
                let mut offset = row_base;
                for cell in cells {
                    let name = if cell.text.is_empty() {
                        format!("unnamed@{offset}")
                    } else {
                        cell.text.clone()
                    };
                    fields.push(HeaderField {
                        name,
                        bit_offset: offset,
                        bit_width: cell.width,
                        rfc_number: d.rfc_number,
                        diagram_index: d.diagram_index,
                    });
                    offset += cell.width;
                }
                row_base += 32;
            }
        }
        *base += 32 * r;
        group.clear();
    };

    for (k, row) in d.rows.iter().enumerate() {
        let line = d.start_line + k;
        match classify(row) {
            RowKind::Content => {
                let cells = split_cells(row, line)?;
                if cells.iter().any(|c| c.text.contains("...")) {
                    variable = true;
                }
                group.push((line, cells));
            }
            RowKind::Ruler => flush(&mut group, &mut base, &mut fields),
            _ => {}
        }
    }
    flush(&mut group, &mut base, &mut fields);

    out.fields = fields;
    out.variable_length = variable;
    Ok(out)
}

/// Detects and parses every diagram in a document.
pub fn parse_document(doc: &RfcDocument) -> Result<Vec<HeaderDiagram>, DiagramError> {
    detect_diagrams(doc).iter().map(parse_diagram).collect()
}

/// Renders fields that span a single 32-bit row back into ruler-geometry
/// cells. Used as the round-trip oracle for the cell-width rule.
pub fn render_row(widths: &[usize]) -> String {
    let mut s = String::from("|");
    for (i, w) in widths.iter().enumerate() {
        for _ in 0..(2 * w - 1) {
            s.push(if i % 2 == 0 { ' ' } else { '.' });
        }
        s.push('|');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(lines: &[&str]) -> RfcDocument {
        RfcDocument::from_raw(791, &lines.join("\n"), "test")
    }

    const IPV4_ROW: &str =
        "|Version|  IHL  |Type of Service|          Total Length         |";

    #[test]
    fn parse_row_ipv4_first_row() {
        let fields = parse_row(IPV4_ROW, 0).unwrap();
        let got: Vec<(&str, usize, usize)> =
            fields.iter().map(|f| (f.name.as_str(), f.bit_offset, f.bit_width)).collect();
        assert_eq!(
            got,
            vec![
                ("Version", 0, 4),
                ("IHL", 4, 4),
                ("Type of Service", 8, 8),
                ("Total Length", 16, 16),
            ]
        );
    }

    #[test]
    fn parse_row_full_width_at_base() {
        let row = "|                       Source Address                          |";
        let fields = parse_row(row, 96).unwrap();
        assert_eq!(fields.len(), 1);
        assert_eq!(fields[0].name, "Source Address");
        assert_eq!(fields[0].bit_offset, 96);
        assert_eq!(fields[0].bit_width, 32);
    }

    #[test]
    fn degenerate_empty_row_is_malformed() {
        assert!(matches!(parse_row("||", 0), Err(DiagramError::MalformedRow { .. })));
    }

    #[test]
    fn widths_sum_to_32_and_offsets_are_gapless() {
        let fields = parse_row(IPV4_ROW, 64).unwrap();
        let total: usize = fields.iter().map(|f| f.bit_width).sum();
        assert_eq!(total, 32);
        let mut expect = 64;
        for f in &fields {
            assert_eq!(f.bit_offset, expect);
            expect += f.bit_width;
        }
    }

    #[test]
    fn prose_only_document_has_no_diagrams() {
        let d = doc(&["This is prose.", "More prose follows.", ""]);
        assert!(detect_diagrams(&d).is_empty());
    }

    #[test]
    fn single_ruler_is_below_threshold() {
        let d = doc(&["+-+-+-+-+", "no content here"]);
        assert!(detect_diagrams(&d).is_empty());
    }

    #[test]
    fn detects_minimal_diagram_with_caption() {
        let d = doc(&[
            " 0                   1",
            " 0 1 2 3 4 5 6 7 8 9 0 1",
            "+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+",
            "|                             Data                              |",
            "+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+",
            "prose after",
        ]);
        let ds = detect_diagrams(&d);
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].start_line, 0);
        assert_eq!(ds[0].end_line, 4);
        let parsed = parse_diagram(&ds[0]).unwrap();
        assert_eq!(parsed.fields.len(), 1);
        assert_eq!(parsed.fields[0].bit_width, 32);
    }

    #[test]
    fn multi_row_blank_continuation_merges() {
        let d = doc(&[
            "+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+",
            "|                      Originate Timestamp                      |",
            "|                                                               |",
            "+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+",
        ]);
        let parsed = parse_diagram(&detect_diagrams(&d)[0]).unwrap();
        assert_eq!(parsed.fields.len(), 1);
        assert_eq!(parsed.fields[0].name, "Originate Timestamp");
        assert_eq!(parsed.fields[0].bit_width, 64);
        assert_eq!(parsed.fields[0].bit_offset, 0);
    }

    #[test]
    fn repeated_name_merges_once() {
        let d = doc(&[
            "+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+",
            "|                            Address                            |",
            "|                            Address                            |",
            "+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+",
        ]);
        let parsed = parse_diagram(&detect_diagrams(&d)[0]).unwrap();
        assert_eq!(parsed.fields.len(), 1);
        assert_eq!(parsed.fields[0].name, "Address");
        assert_eq!(parsed.fields[0].bit_width, 64);
    }

    #[test]
    fn unnamed_cell_gets_synthesized_name() {
        let row = "|     Type      |     Code      |          unnamed maybe        |";
        let fields = parse_row("|     Type      |     Code      |                               |", 0)
            .unwrap();
        let _ = row;
        assert_eq!(fields[2].name, "unnamed@16");
    }

    #[test]
    fn variable_length_marker_sets_flag() {
        let d = doc(&[
            "+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+",
            "|                          Options ...                          |",
            "+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+",
        ]);
        let parsed = parse_diagram(&detect_diagrams(&d)[0]).unwrap();
        assert!(parsed.variable_length);
    }

    #[test]
    fn render_parse_round_trip_recovers_partition() {
        let widths = vec![4, 4, 8, 16];
        let fields = parse_row(&render_row(&widths), 0).unwrap();
        let got: Vec<usize> = fields.iter().map(|f| f.bit_width).collect();
        assert_eq!(got, widths);
    }
}
