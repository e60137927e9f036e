//! Shared CSV helpers. Every float is written with 17 significant digits in
//! scientific notation so that output files are bit-exact across platforms.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn csv_reader<R: Read>(r: R, has_headers: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .trim(csv::Trim::All)
        .from_reader(r)
}

pub(crate) fn parse_f64(field: &str, what: &'static str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|e| Error::invalid(what, format!("`{field}`: {e}")))
}
