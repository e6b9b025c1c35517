//! CSV readers and writers for grouped datasets and posterior draws.
//!
//! Datasets use the header `group_id,y,x_1,…,x_p`; rows sharing a
//! `group_id` form one group, in order of first appearance. Draw files use
//! `draw_index,<prefix>_1,…,<prefix>_p`.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::experiment::fmt_f64;
use crate::model::{Group, GroupedDataset};
use crate::sampler::DrawMatrix;

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_num(field: &str, line: usize, col: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("column {col}: cannot parse {field:?} as a number"),
    })
}

fn check_header(header: &csv::StringRecord, lead: &[&str], prefix: &str) -> Result<usize> {
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields.len() <= lead.len() || fields[..lead.len()] != *lead {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must start with {}", lead.join(",")),
        });
    }
    for (k, name) in fields[lead.len()..].iter().enumerate() {
        let want = format!("{prefix}_{}", k + 1);
        if *name != want {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column {want}, found {name}"),
            });
        }
    }
    Ok(fields.len() - lead.len())
}

pub fn read_dataset_csv<R: Read>(input: R) -> Result<GroupedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let p = check_header(&header, &["group_id", "y"], "x")?;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut acc: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != p + 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", p + 2, rec.len()),
            });
        }
        let id = rec[0].trim().to_string();
        let y = parse_num(&rec[1], line, "y")?;
        let slot = *index.entry(id).or_insert_with(|| {
            acc.push((Vec::new(), Vec::new()));
            acc.len() - 1
        });
        for k in 0..p {
            let v = parse_num(&rec[k + 2], line, &format!("x_{}", k + 1))?;
            acc[slot].0.push(v);
        }
        acc[slot].1.push(y);
    }
    if acc.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "dataset has no rows".into(),
        });
    }
    let groups = acc
        .into_iter()
        .map(|(x, y)| Group::new(x, y, p))
        .collect::<Result<Vec<_>>>()?;
    GroupedDataset::new(groups, p)
}

/// Writes groups with ids `0, 1, …` in dataset order.
pub fn write_dataset_csv<W: Write>(data: &GroupedDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let p = data.p();
    let mut header = vec!["group_id".to_string(), "y".to_string()];
    header.extend((1..=p).map(|k| format!("x_{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for (gi, g) in data.groups().iter().enumerate() {
        for (j, y) in g.y().iter().enumerate() {
            let mut rec = vec![gi.to_string(), fmt_f64(*y)];
            rec.extend(g.x()[j * p..(j + 1) * p].iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_draws_csv<W: Write>(draws: &DrawMatrix, prefix: &str, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["draw_index".to_string()];
    header.extend((1..=draws.p()).map(|k| format!("{prefix}_{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for (d, row) in draws.rows().enumerate() {
        let mut rec = vec![d.to_string()];
        rec.extend(row.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a draw file whose value columns are named `<prefix>_k`. The
/// returned matrix carries `eta` and `seed` as given.
pub fn read_draws_csv<R: Read>(input: R, prefix: &str, eta: f64, seed: u64) -> Result<DrawMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let p = check_header(&header, &["draw_index"], prefix)?;
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != p + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", p + 1, rec.len()),
            });
        }
        for k in 0..p {
            data.push(parse_num(
                &rec[k + 1],
                line,
                &format!("{prefix}_{}", k + 1),
            )?);
        }
    }
    DrawMatrix::from_flat(data, p, eta, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let data = GroupedDataset::new(
            vec![
                Group::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -1.25], 2).unwrap(),
                Group::new(vec![0.1, 1.0 / 3.0], vec![7.0], 2).unwrap(),
            ],
            2,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        assert_eq!(read_dataset_csv(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn interleaved_ids_are_grouped() {
        let text = "group_id,y,x_1\na,1,10\nb,2,20\na,3,30\n";
        let d = read_dataset_csv(text.as_bytes()).unwrap();
        assert_eq!(d.groups().len(), 2);
        assert_eq!(d.groups()[0].y(), &[1.0, 3.0]);
        assert_eq!(d.groups()[0].x(), &[10.0, 30.0]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "group_id,y,x_1\na,1,10\nb,oops,20\n";
        match read_dataset_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_dataset_csv("id,y,x_1\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_dataset_csv("group_id,y,x_2\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn draws_round_trip() {
        let d = DrawMatrix::from_rows(&[vec![1.0, 2.0], vec![0.1, -3.5]], 0.5, 9).unwrap();
        let mut buf = Vec::new();
        write_draws_csv(&d, "beta_calib", &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("draw_index,beta_calib_1,beta_calib_2\n"));
        let back = read_draws_csv(buf.as_slice(), "beta_calib", 0.5, 9).unwrap();
        assert_eq!(back.as_slice(), d.as_slice());
    }
}
