use std::fmt::Write as _;

use crate::points_to::PointsToResult;
use crate::sir::{FuncId, InstRef, Opcode, SirModule};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallEdge {
    pub caller: FuncId,
    pub site: InstRef,
    pub callee: FuncId,
    pub indirect: bool,
}

/// Functions (defined and declared) and the calls between them.
#[derive(Clone, Debug)]
pub struct CallGraph {
    pub edges: Vec<CallEdge>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    site_edges: std::collections::BTreeMap<InstRef, Vec<usize>>,
}

impl CallGraph {
    pub fn callees_of(&self, f: FuncId) -> impl Iterator<Item = &CallEdge> + '_ {
        self.out_edges[f.0 as usize].iter().map(|&i| &self.edges[i])
    }

    /// Call sites that may invoke `f`.
    pub fn callers_of(&self, f: FuncId) -> impl Iterator<Item = &CallEdge> + '_ {
        self.in_edges[f.0 as usize].iter().map(|&i| &self.edges[i])
    }

    pub fn targets(&self, site: InstRef) -> impl Iterator<Item = FuncId> + '_ {
        self.site_edges
            .get(&site)
            .into_iter()
            .flatten()
            .map(|&i| self.edges[i].callee)
    }

    pub fn dump(&self, m: &SirModule) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let _ = writeln!(
                out,
                "{} -> {} [{} {}]",
                m.function(e.caller).name,
                m.function(e.callee).name,
                if e.indirect { "indirect" } else { "direct" },
                m.inst_loc(e.site)
            );
        }
        out
    }
}

pub fn build_call_graph(m: &SirModule, r: &PointsToResult) -> CallGraph {
    let mut edges = Vec::new();
    for (site, inst) in m.instructions() {
        if inst.opcode != Opcode::Call {
            continue;
        }
        match m.direct_callee(inst) {
            Some(callee) => edges.push(CallEdge {
                caller: site.func,
                site,
                callee,
                indirect: false,
            }),
            None => {
                for callee in r.callees(m, site) {
                    edges.push(CallEdge {
                        caller: site.func,
                        site,
                        callee,
                        indirect: true,
                    });
                }
            }
        }
    }
    let mut out_edges = vec![Vec::new(); m.functions.len()];
    let mut in_edges = vec![Vec::new(); m.functions.len()];
    let mut site_edges: std::collections::BTreeMap<InstRef, Vec<usize>> = Default::default();
    for (i, e) in edges.iter().enumerate() {
        out_edges[e.caller.0 as usize].push(i);
        in_edges[e.callee.0 as usize].push(i);
        site_edges.entry(e.site).or_default().push(i);
    }
    CallGraph {
        edges,
        out_edges,
        in_edges,
        site_edges,
    }
}

/// The call-graph node for a function name, defined or declared.
pub fn get_node(m: &SirModule, name: &str) -> Option<FuncId> {
    m.function_by_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points_to::solve_points_to;
    use crate::sir::parse_sir;

    #[test]
    fn main_calls_four_helpers() {
        let text = r#"
declare @getUsername() -> ptr
declare @getPassword() -> ptr
declare @format(ptr, ptr) -> ptr
declare @sendHTTP(ptr)
define @main() {
entry:
  %usrnm = call @getUsername()
  %passwd = call @getPassword()
  %msg = call @format(%usrnm, %passwd)
  call @sendHTTP(%msg)
  ret
}
"#;
        let m = parse_sir(text).unwrap();
        let cg = build_call_graph(&m, &solve_points_to(&m));
        let main = get_node(&m, "main").unwrap();
        assert_eq!(cg.callees_of(main).count(), 4);
        let send = get_node(&m, "sendHTTP").unwrap();
        assert!(!m.function(send).is_defined());
        assert_eq!(cg.callers_of(send).count(), 1);
    }

    #[test]
    fn single_function_no_edges() {
        let m = parse_sir("define @f() {\nentry:\n  ret\n}\n").unwrap();
        let cg = build_call_graph(&m, &solve_points_to(&m));
        assert!(cg.edges.is_empty());
        assert!(get_node(&m, "f").is_some());
        assert!(get_node(&m, "missing").is_none());
    }

    #[test]
    fn function_pointer_phi_gives_two_edges() {
        let text = r#"
define @f() {
entry:
  ret
}
define @g() {
entry:
  ret
}
define @main(%c: val) {
entry:
  condbr %c, a, b
a:
  br join
b:
  br join
join:
  %fp = phi [@f, a], [@g, b]
  call %fp()
  ret
}
"#;
        let m = parse_sir(text).unwrap();
        let pts = solve_points_to(&m);
        let cg = build_call_graph(&m, &pts);
        let main = get_node(&m, "main").unwrap();
        let callees: Vec<_> = cg.callees_of(main).map(|e| m.function(e.callee).name.clone()).collect();
        assert_eq!(callees, vec!["f", "g"]);
        assert!(cg.edges.iter().all(|e| e.indirect));
        assert_eq!(cg.dump(&m).lines().count(), 2);
    }
}
