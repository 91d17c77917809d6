//! JSON netlist dialect: document model, parser, printer and static checks.

mod parse;
mod print;
mod validate;

pub use parse::{parse, strip_comments, NetlistError};
pub use print::print;
pub use validate::{validate, DiagCode, Diagnostic, Severity};

/// Reserved name of the reference node.
pub const GND_NAME: &str = "gnd";

#[derive(Debug, Clone, PartialEq)]
pub struct NetlistDocument {
    pub modules: Vec<ModuleDefinition>,
    pub top: String,
    pub globals: Vec<(String, f64)>,
    /// Initial guesses for the DC solve, keyed by hierarchical signal name.
    pub nodeset: Vec<(String, f64)>,
}

impl NetlistDocument {
    pub fn module(&self, name: &str) -> Option<&ModuleDefinition> {
        self.modules.iter().find(|m| m.name == name)
    }

    pub fn global_index(&self, name: &str) -> Option<usize> {
        self.globals.iter().position(|(n, _)| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleDefinition {
    pub name: String,
    pub external_nodes: Vec<String>,
    pub internal_nodes: Vec<String>,
    pub input_params: Vec<String>,
    pub submodel: Option<SubModelSpec>,
    pub schematic: Vec<InstanceStatement>,
}

impl ModuleDefinition {
    pub fn intrinsic_params(&self) -> &[String] {
        self.submodel.as_ref().map_or(&[], |s| &s.intrinsic_params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnalysisTag {
    Dc,
    Tran,
    Ac,
}

impl AnalysisTag {
    pub fn as_str(self) -> &'static str {
        match self {
            AnalysisTag::Dc => "DC",
            AnalysisTag::Tran => "TRAN",
            AnalysisTag::Ac => "AC",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "DC" => Some(AnalysisTag::Dc),
            "TRAN" => Some(AnalysisTag::Tran),
            "AC" => Some(AnalysisTag::Ac),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubModelBody {
    /// Bracketed expression list, one entry per intrinsic parameter.
    Expr(String),
    /// Lookup table for `device`. `axes` binds each table axis to a module
    /// node, an input parameter, or a node difference `a-b`; `None` selects the
    /// default MOS binding.
    Table { device: String, axes: Option<Vec<(String, String)>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubModelSpec {
    pub body: SubModelBody,
    pub intrinsic_params: Vec<String>,
    /// `None` means active under every analysis.
    pub analyses: Option<Vec<AnalysisTag>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Literal(f64),
    Symbol(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStatement {
    pub name: String,
    pub master: String,
    pub nodes: Vec<(String, String)>,
    pub params: Vec<(String, ParamValue)>,
    /// Request a branch-current unknown for an element that does not need one.
    pub galv: bool,
}

impl InstanceStatement {
    pub fn node(&self, port: &str) -> Option<&str> {
        self.nodes.iter().find(|(p, _)| p == port).map(|(_, n)| n.as_str())
    }

    pub fn param(&self, formal: &str) -> Option<&ParamValue> {
        self.params.iter().find(|(p, _)| p == formal).map(|(_, v)| v)
    }
}

/// Name of the branch-current unknown an element instance adds to its module.
pub fn galv_node_name(instance: &str) -> String {
    format!("{instance}.i")
}
