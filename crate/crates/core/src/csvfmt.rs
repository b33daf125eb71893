//! CSV rendering of report rows.

/// Writes `header` and `rows` as CSV, quoting fields only where needed.
pub(crate) fn to_string<R, F>(header: &[&str], rows: R) -> String
where
    R: IntoIterator<Item = Vec<F>>,
    F: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("write to memory");
    for row in rows {
        w.write_record(&row).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("fields are UTF-8")
}

#[cfg(test)]
mod tests {
    #[test]
    fn quotes_only_when_needed() {
        let s = super::to_string(&["a", "b"], [vec!["1".to_string(), "x,y".to_string()]]);
        assert_eq!(s, "a,b\n1,\"x,y\"\n");
    }
}
