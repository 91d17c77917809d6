use serde_json::{Map, Value};
use thiserror::Error;

use super::{
    AnalysisTag, InstanceStatement, ModuleDefinition, NetlistDocument, ParamValue, SubModelBody, SubModelSpec,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NetlistError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    SyntaxError { line: usize, column: usize, message: String },
    #[error("schema error in {context}: {message}")]
    SchemaError { context: String, message: String },
}

impl NetlistError {
    pub fn name(&self) -> &'static str {
        match self {
            NetlistError::SyntaxError { .. } => "SyntaxError",
            NetlistError::SchemaError { .. } => "SchemaError",
        }
    }
}

fn schema<T>(context: impl Into<String>, message: impl Into<String>) -> Result<T, NetlistError> {
    Err(NetlistError::SchemaError { context: context.into(), message: message.into() })
}

/// Removes `#` line comments outside string literals and escapes raw line
/// breaks inside them, so that listings written for humans become JSON.
pub fn strip_comments(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut chars = src.chars();
    let mut in_string = false;
    let mut escaped = false;
    while let Some(c) = chars.next() {
        if in_string {
            match c {
                _ if escaped => {
                    escaped = false;
                    out.push(c);
                }
                '\\' => {
                    escaped = true;
                    out.push(c);
                }
                '"' => {
                    in_string = false;
                    out.push(c);
                }
                '\n' => out.push_str("\\n"),
                '\r' => {}
                '\t' => out.push_str("\\t"),
                _ => out.push(c),
            }
        } else {
            match c {
                '"' => {
                    in_string = true;
                    out.push(c);
                }
                '#' => {
                    for d in chars.by_ref() {
                        if d == '\n' {
                            out.push('\n');
                            break;
                        }
                    }
                }
                _ => out.push(c),
            }
        }
    }
    out
}

/// Reads a number given either as a JSON number or a numeric string. Values
/// too large for `f64` become infinite.
pub(crate) fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.to_string().parse().ok(),
        Value::String(s) => {
            let t = s.trim();
            let first = t.chars().next()?;
            if !(first.is_ascii_digit() || matches!(first, '.' | '+' | '-')) {
                return None;
            }
            t.parse::<f64>().ok().filter(|x| !x.is_nan())
        }
        _ => None,
    }
}

fn ident_list(ctx: &str, field: &str, v: &Value) -> Result<Vec<String>, NetlistError> {
    let arr = match v.as_array() {
        Some(a) => a,
        None => return schema(ctx, format!("field `{field}` must be a list of names")),
    };
    arr.iter()
        .map(|e| match e.as_str() {
            Some(s) => Ok(s.to_string()),
            None => schema(ctx, format!("field `{field}` must contain only strings")),
        })
        .collect()
}

fn object<'a>(ctx: &str, field: &str, v: &'a Value) -> Result<&'a Map<String, Value>, NetlistError> {
    match v.as_object() {
        Some(o) => Ok(o),
        None => schema(ctx, format!("field `{field}` must be an object")),
    }
}

fn check_fields(ctx: &str, obj: &Map<String, Value>, allowed: &[&str]) -> Result<(), NetlistError> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return schema(ctx, format!("unknown field `{k}`"));
        }
    }
    Ok(())
}

fn required<'a>(ctx: &str, obj: &'a Map<String, Value>, field: &str) -> Result<&'a Value, NetlistError> {
    match obj.get(field) {
        Some(v) => Ok(v),
        None => schema(ctx, format!("missing required field `{field}`")),
    }
}

fn mos_loader_device(loader: &str) -> Option<String> {
    let rest = &loader[loader.find("lut.MosLookup(")? + "lut.MosLookup(".len()..];
    let rest = rest.trim_start().strip_prefix('"')?;
    let end = rest.find('"')?;
    Some(rest[..end].to_string())
}

fn parse_submodel(ctx: &str, v: &Value) -> Result<SubModelSpec, NetlistError> {
    let ctx = format!("{ctx}.SubModel");
    let obj = object(&ctx, "SubModel", v)?;
    check_fields(&ctx, obj, &["Expr", "Table", "ModelLoader", "IntrinsicParams", "Analysis"])?;
    let intrinsic_params = ident_list(&ctx, "IntrinsicParams", required(&ctx, obj, "IntrinsicParams")?)?;
    let analyses = match obj.get("Analysis") {
        None => None,
        Some(a) => Some(
            ident_list(&ctx, "Analysis", a)?
                .iter()
                .map(|s| match AnalysisTag::from_name(s) {
                    Some(t) => Ok(t),
                    None => schema(&ctx, format!("unknown analysis `{s}`")),
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };
    let bodies = ["Expr", "Table", "ModelLoader"].iter().filter(|k| obj.contains_key(**k)).count();
    if bodies != 1 {
        return schema(&ctx, "exactly one of `Expr`, `Table` or `ModelLoader` is required");
    }
    let body = if let Some(e) = obj.get("Expr") {
        match e.as_str() {
            Some(s) => SubModelBody::Expr(s.to_string()),
            None => return schema(&ctx, "`Expr` must be a string"),
        }
    } else if let Some(t) = obj.get("Table") {
        let tctx = format!("{ctx}.Table");
        let t = object(&tctx, "Table", t)?;
        check_fields(&tctx, t, &["Device", "Axes"])?;
        let device = match required(&tctx, t, "Device")?.as_str() {
            Some(s) => s.to_string(),
            None => return schema(&tctx, "`Device` must be a string"),
        };
        let axes = match t.get("Axes") {
            None => None,
            Some(a) => Some(
                object(&tctx, "Axes", a)?
                    .iter()
                    .map(|(k, b)| match b.as_str() {
                        Some(s) => Ok((k.clone(), s.to_string())),
                        None => schema(&tctx, format!("axis binding `{k}` must be a string")),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        SubModelBody::Table { device, axes }
    } else {
        let loader = obj["ModelLoader"].as_str().unwrap_or_default();
        match mos_loader_device(loader) {
            Some(device) => SubModelBody::Table { device, axes: None },
            None => return schema(&ctx, "only `lut.MosLookup(\"<device>\", ...)` loaders are understood"),
        }
    };
    Ok(SubModelSpec { body, intrinsic_params, analyses })
}

fn parse_instance(module: &str, name: &str, v: &Value) -> Result<InstanceStatement, NetlistError> {
    let ctx = format!("{module}.{name}");
    let obj = object(&ctx, name, v)?;
    check_fields(&ctx, obj, &["MasterName", "ExternalNodes", "InputParams", "Galv"])?;
    let master = match required(&ctx, obj, "MasterName")?.as_str() {
        Some(s) => s.to_string(),
        None => return schema(&ctx, "`MasterName` must be a string"),
    };
    let nodes = object(&ctx, "ExternalNodes", required(&ctx, obj, "ExternalNodes")?)?
        .iter()
        .map(|(port, n)| match n.as_str() {
            Some(s) => Ok((port.clone(), s.to_string())),
            None => schema(&ctx, format!("node binding for `{port}` must be a string")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let params = match obj.get("InputParams") {
        None => Vec::new(),
        Some(p) => object(&ctx, "InputParams", p)?
            .iter()
            .map(|(formal, val)| {
                if let Some(x) = number(val) {
                    Ok((formal.clone(), ParamValue::Literal(x)))
                } else if let Some(s) = val.as_str() {
                    Ok((formal.clone(), ParamValue::Symbol(s.to_string())))
                } else {
                    schema(&ctx, format!("parameter `{formal}` must be a number or a name"))
                }
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    let galv = match obj.get("Galv") {
        None => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return schema(&ctx, "`Galv` must be a boolean"),
    };
    Ok(InstanceStatement { name: name.to_string(), master, nodes, params, galv })
}

fn parse_module(name: &str, v: &Value) -> Result<ModuleDefinition, NetlistError> {
    let obj = object(name, name, v)?;
    check_fields(name, obj, &["ExternalNodes", "InternalNodes", "InputParams", "SubModel", "Schematic"])?;
    let external_nodes = ident_list(name, "ExternalNodes", required(name, obj, "ExternalNodes")?)?;
    let internal_nodes = ident_list(name, "InternalNodes", required(name, obj, "InternalNodes")?)?;
    let input_params = ident_list(name, "InputParams", required(name, obj, "InputParams")?)?;
    let submodel = obj.get("SubModel").map(|s| parse_submodel(name, s)).transpose()?;
    let schematic = object(name, "Schematic", required(name, obj, "Schematic")?)?
        .iter()
        .map(|(inst, body)| parse_instance(name, inst, body))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ModuleDefinition { name: name.to_string(), external_nodes, internal_nodes, input_params, submodel, schematic })
}

fn number_map(field: &str, v: &Value) -> Result<Vec<(String, f64)>, NetlistError> {
    let obj = object("document", field, v)?;
    obj.iter()
        .map(|(k, val)| match number(val) {
            Some(x) => Ok((k.clone(), x)),
            None => schema("document", format!("`{field}.{k}` must be a number")),
        })
        .collect()
}

/// Parses netlist text into a document. Structural checks beyond the field
/// schema are left to [`validate`](super::validate).
pub fn parse(source: &str) -> Result<NetlistDocument, NetlistError> {
    let text = strip_comments(source);
    let root: Value = serde_json::from_str(&text).map_err(|e| NetlistError::SyntaxError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let obj = match root.as_object() {
        Some(o) => o,
        None => return schema("document", "the netlist must be a JSON object"),
    };
    let top = match obj.get("Top") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return schema("document", "`Top` must be a string"),
        None => return schema("document", "missing required field `Top`"),
    };
    let globals = obj.get("Globals").map(|g| number_map("Globals", g)).transpose()?.unwrap_or_default();
    let nodeset = obj.get("NodeSet").map(|g| number_map("NodeSet", g)).transpose()?.unwrap_or_default();
    let modules = obj
        .iter()
        .filter(|(k, _)| !matches!(k.as_str(), "Top" | "Globals" | "NodeSet"))
        .map(|(k, v)| parse_module(k, v))
        .collect::<Result<Vec<_>, _>>()?;
    if !modules.iter().any(|m| m.name == top) {
        return schema("document", format!("top module `{top}` is not defined"));
    }
    if globals.iter().any(|(n, _)| n == super::GND_NAME) {
        return schema("Globals", "`gnd` is reserved for the reference node");
    }
    Ok(NetlistDocument { modules, top, globals, nodeset })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CODE1: &str = r#"{
"Top": "SizeDepResistor",
"SizeDepResistor":{ # Define the subcircuit module.
  "ExternalNodes":["l","r"],
  "InputParams":["Rlength","Rwidth"],
  "InternalNodes":[],
  "SubModel":{
    "Expr":"[1e2*Rlength/Rwidth,]",
    "IntrinsicParams":["RValue"]
  },
  "Schematic":{
    # Instantiate each subcircuit or element in the module.
    "instanceR":{
      "MasterName":"resistor",
      "ExternalNodes":{"left":"l","right":"r"},
      "InputParams":{"resistance":"RValue"}
    }
  }
}
}"#;

    #[test]
    fn size_dependent_resistor() {
        let doc = parse(CODE1).unwrap();
        let m = doc.module("SizeDepResistor").unwrap();
        assert_eq!(m.external_nodes, ["l", "r"]);
        assert_eq!(m.input_params, ["Rlength", "Rwidth"]);
        assert_eq!(m.intrinsic_params(), ["RValue"]);
        assert_eq!(m.schematic.len(), 1);
        assert_eq!(m.schematic[0].master, "resistor");
        assert_eq!(m.schematic[0].param("resistance"), Some(&ParamValue::Symbol("RValue".into())));
    }

    #[test]
    fn missing_external_nodes() {
        let text = CODE1.replace(r#""ExternalNodes":["l","r"],"#, "");
        match parse(&text) {
            Err(NetlistError::SchemaError { context, message }) => {
                assert_eq!(context, "SizeDepResistor");
                assert!(message.contains("ExternalNodes"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_module() {
        let doc = parse(r#"{"Top":"E","E":{"ExternalNodes":[],"InternalNodes":[],"InputParams":[],"Schematic":{}}}"#)
            .unwrap();
        assert!(doc.modules[0].schematic.is_empty());
        assert!(doc.modules[0].submodel.is_none());
    }

    #[test]
    fn numbers_overflow_and_strings() {
        let doc = parse(
            r#"{"Top":"T","Globals":{"a":"2.5","b":1e1000},
            "T":{"ExternalNodes":[],"InternalNodes":["n"],"InputParams":[],"Schematic":{
            "r":{"MasterName":"resistor","ExternalNodes":{"left":"n","right":"gnd"},"InputParams":{"resistance":"-1e3"}}}}}"#,
        )
        .unwrap();
        assert_eq!(doc.globals, vec![("a".into(), 2.5), ("b".into(), f64::INFINITY)]);
        assert_eq!(doc.modules[0].schematic[0].params[0].1, ParamValue::Literal(-1e3));
    }

    #[test]
    fn syntax_error_position() {
        match parse("{\n\"Top\": \"T\",,\n}") {
            Err(NetlistError::SyntaxError { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comment_inside_string_is_kept() {
        assert_eq!(strip_comments("\"a#b\" # c\n1"), "\"a#b\" \n1");
        assert_eq!(strip_comments("\"x\ny\""), "\"x\\ny\"");
    }

    #[test]
    fn model_loader_selects_device() {
        assert_eq!(
            mos_loader_device("SimInfo->lut.MosLookup(\"NMOSTYPE\",\n /path/to/data; SimInfo=SimInfo)"),
            Some("NMOSTYPE".into())
        );
        assert_eq!(mos_loader_device("something()"), None);
    }
}
