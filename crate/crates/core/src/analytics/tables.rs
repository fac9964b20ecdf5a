//! CSV renderings of analytics tables.

use std::collections::BTreeMap;

use super::{AgreementReport, RateRow, StabilityTable};

fn write_rows(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// An undefined rate is an empty cell.
pub fn rates_csv(rows: &[RateRow]) -> String {
    write_rows(
        &["group", "fails", "passes", "rate"],
        rows.iter().map(|r| vec![r.group.clone(), r.fails.to_string(), r.passes.to_string(), opt(r.rate)]),
    )
}

pub fn stability_csv(table: &StabilityTable) -> String {
    write_rows(
        &["item", "class", "modal_fraction"],
        table.items.iter().map(|(id, s)| {
            vec![id.key().to_string(), s.class.as_str().to_string(), format!("{:.6}", s.modal_fraction)]
        }),
    )
}

pub fn agreement_csv(report: &AgreementReport) -> String {
    let mut rows: Vec<Vec<String>> = report
        .items
        .iter()
        .map(|(id, a)| {
            let m = a.matched.map(|b| b.to_string()).unwrap_or_default();
            vec![id.key().to_string(), a.agent.to_string(), a.human.to_string(), m, String::new()]
        })
        .collect();
    for (dim, rate) in &report.per_dimension {
        rows.push(vec![dim.as_str().to_string(), String::new(), String::new(), String::new(), opt(rate.percent)]);
    }
    rows.push(vec!["overall".into(), String::new(), String::new(), String::new(), opt(report.overall.percent)]);
    write_rows(&["item", "agent", "human", "matched", "percent"], rows)
}

pub fn means_csv(means: &BTreeMap<String, f64>) -> String {
    write_rows(&["key", "mean"], means.iter().map(|(k, v)| vec![k.clone(), format!("{v:.6}")]))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undefined_rate_is_empty_cell() {
        let rows = vec![
            RateRow { group: "a".into(), fails: 1, passes: 1, rate: Some(0.5) },
            RateRow { group: "b".into(), fails: 0, passes: 0, rate: None },
        ];
        assert_eq!(rates_csv(&rows), "group,fails,passes,rate\na,1,1,0.500000\nb,0,0,\n");
    }
}
