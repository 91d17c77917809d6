use serde_json::{Map, Number, Value};

use super::{NetlistDocument, ParamValue, SubModelBody};

fn num(x: f64) -> Value {
    if let Some(n) = Number::from_f64(x) {
        return Value::Number(n);
    }
    // Out-of-range literals are written as overflowing exponents so that the
    // parser maps them back to the same infinity.
    let token = if x > 0.0 { "1e999" } else { "-1e999" };
    Value::Number(serde_json::from_str(token).expect("arbitrary-precision number"))
}

fn names(v: &[String]) -> Value {
    Value::Array(v.iter().cloned().map(Value::String).collect())
}

/// Prints a document in the netlist dialect. Parsing the output yields a
/// document equal to `doc`.
pub fn print(doc: &NetlistDocument) -> String {
    let mut root = Map::new();
    root.insert("Top".into(), Value::String(doc.top.clone()));
    if !doc.globals.is_empty() {
        root.insert("Globals".into(), Value::Object(doc.globals.iter().map(|(k, v)| (k.clone(), num(*v))).collect()));
    }
    if !doc.nodeset.is_empty() {
        root.insert("NodeSet".into(), Value::Object(doc.nodeset.iter().map(|(k, v)| (k.clone(), num(*v))).collect()));
    }
    for m in &doc.modules {
        let mut o = Map::new();
        o.insert("ExternalNodes".into(), names(&m.external_nodes));
        o.insert("InternalNodes".into(), names(&m.internal_nodes));
        o.insert("InputParams".into(), names(&m.input_params));
        if let Some(sm) = &m.submodel {
            let mut s = Map::new();
            if let Some(a) = &sm.analyses {
                s.insert("Analysis".into(), Value::Array(a.iter().map(|t| Value::String(t.as_str().into())).collect()));
            }
            match &sm.body {
                SubModelBody::Expr(e) => {
                    s.insert("Expr".into(), Value::String(e.clone()));
                }
                SubModelBody::Table { device, axes } => {
                    let mut t = Map::new();
                    t.insert("Device".into(), Value::String(device.clone()));
                    if let Some(axes) = axes {
                        t.insert(
                            "Axes".into(),
                            Value::Object(axes.iter().map(|(k, b)| (k.clone(), Value::String(b.clone()))).collect()),
                        );
                    }
                    s.insert("Table".into(), Value::Object(t));
                }
            }
            s.insert("IntrinsicParams".into(), names(&sm.intrinsic_params));
            o.insert("SubModel".into(), Value::Object(s));
        }
        let mut sch = Map::new();
        for inst in &m.schematic {
            let mut i = Map::new();
            i.insert("MasterName".into(), Value::String(inst.master.clone()));
            i.insert(
                "ExternalNodes".into(),
                Value::Object(inst.nodes.iter().map(|(p, n)| (p.clone(), Value::String(n.clone()))).collect()),
            );
            i.insert(
                "InputParams".into(),
                Value::Object(
                    inst.params
                        .iter()
                        .map(|(p, v)| {
                            let val = match v {
                                ParamValue::Literal(x) => num(*x),
                                ParamValue::Symbol(s) => Value::String(s.clone()),
                            };
                            (p.clone(), val)
                        })
                        .collect(),
                ),
            );
            if inst.galv {
                i.insert("Galv".into(), Value::Bool(true));
            }
            sch.insert(inst.name.clone(), Value::Object(i));
        }
        o.insert("Schematic".into(), Value::Object(sch));
        root.insert(m.name.clone(), Value::Object(o));
    }
    serde_json::to_string_pretty(&Value::Object(root)).expect("netlist values serialize")
}
