use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Counts of total report lengths.
pub fn length_hist<I: IntoIterator<Item = usize>>(lengths: I) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for n in lengths {
        *h.entry(n).or_insert(0) += 1;
    }
    h
}

pub fn hist_csv(hist: &BTreeMap<usize, usize>) -> String {
    let mut out = String::from("length,count\n");
    for (len, count) in hist {
        writeln!(out, "{len},{count}").expect("write to string");
    }
    out
}
