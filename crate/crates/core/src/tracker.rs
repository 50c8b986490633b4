//! Backward tracking from sinks to the allocations whose data they leak.
//!
//! From each sink the tracker walks the data relation of the value-flow
//! graph backward and enumerates every simple path to an allocation. An
//! allocation that only relays data from a deeper allocation (a formatting
//! buffer, a pointer slot) is a waypoint, not the source: the source is the
//! deepest allocation on the path. Paths into the body of an encryption or
//! sealing function are cut, and allocations annotated INSENSITIVE are never
//! reported.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::edl::Pattern;
use crate::graphs::{CallGraph, NodeId, NodeKind, ValueFlowGraph};
use crate::sir::{InsensitiveDataTable, SirModule, ValueId, is_allocation_value};
use crate::taint::{ptr_taint, SeedOrigin, TaintOptions, TaintSink};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Key,
    Plaintext,
    Decrypted,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RolePosition {
    Param(usize),
    Return,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HighRiskEntry {
    /// Exact name, or a prefix followed by `*`.
    pub function: String,
    pub position: RolePosition,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BarrierConfig {
    /// Exact names, or prefixes followed by `*`.
    pub barriers: Vec<String>,
    pub high_risk: Vec<HighRiskEntry>,
    /// Loaded from a user file: unmatched names are reported.
    pub user_supplied: bool,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid barrier config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid barrier config: {0}")]
    Invalid(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    barriers: Vec<String>,
    #[serde(default)]
    high_risk: Vec<EntryFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    function: String,
    param: ParamFile,
    role: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ParamFile {
    Index(usize),
    Name(String),
}

impl Default for BarrierConfig {
    fn default() -> Self {
        use Role::*;
        use RolePosition::*;
        let barriers = [
            "encrypt",
            "decrypt",
            "seal",
            "unseal",
            "aes_*",
            "sgx_rijndael128GCM_encrypt",
            "sgx_rijndael128GCM_decrypt",
            "sgx_seal_data",
            "sgx_unseal_data",
        ];
        let high_risk = [
            ("aes_encrypt", Param(0), Plaintext),
            ("aes_encrypt", Param(1), Key),
            ("aes_decrypt", Param(1), Key),
            ("aes_decrypt", Return, Decrypted),
            ("encrypt", Param(0), Plaintext),
            ("encrypt", Param(1), Key),
            ("decrypt", Param(1), Key),
            ("decrypt", Return, Decrypted),
            ("seal", Param(0), Plaintext),
            ("unseal", Return, Decrypted),
            ("sgx_rijndael128GCM_encrypt", Param(0), Key),
            ("sgx_rijndael128GCM_encrypt", Param(1), Plaintext),
            ("sgx_rijndael128GCM_decrypt", Param(0), Key),
            ("sgx_rijndael128GCM_decrypt", Param(3), Decrypted),
            ("sgx_seal_data", Param(3), Plaintext),
            ("sgx_unseal_data", Param(3), Decrypted),
        ];
        BarrierConfig {
            barriers: barriers.iter().map(|s| s.to_string()).collect(),
            high_risk: high_risk
                .iter()
                .map(|(f, position, role)| HighRiskEntry {
                    function: f.to_string(),
                    position: *position,
                    role: *role,
                })
                .collect(),
            user_supplied: false,
        }
    }
}

impl BarrierConfig {
    /// Parses a config file. It replaces the defaults rather than extending
    /// them.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = serde_json::from_str(text)?;
        let mut high_risk = Vec::new();
        for e in file.high_risk {
            let position = match e.param {
                ParamFile::Index(i) => RolePosition::Param(i),
                ParamFile::Name(s) if s == "return" => RolePosition::Return,
                ParamFile::Name(s) => {
                    return Err(ConfigError::Invalid(format!("param must be an index or \"return\", got {s:?}")))
                }
            };
            let role = match e.role.as_str() {
                "key" => Role::Key,
                "plaintext" => Role::Plaintext,
                "decrypted" => Role::Decrypted,
                other => return Err(ConfigError::Invalid(format!("unknown role {other:?}"))),
            };
            high_risk.push(HighRiskEntry {
                function: e.function,
                position,
                role,
            });
        }
        Ok(BarrierConfig {
            barriers: file.barriers,
            high_risk,
            user_supplied: true,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn is_barrier(&self, name: &str) -> bool {
        self.barriers.iter().any(|p| name_matches(p, name))
    }

    /// Configured names that match no function of `m`, when the config came
    /// from the user.
    pub fn unmatched(&self, m: &SirModule) -> Vec<String> {
        if !self.user_supplied {
            return Vec::new();
        }
        let names: BTreeSet<&str> = self
            .barriers
            .iter()
            .map(String::as_str)
            .chain(self.high_risk.iter().map(|e| e.function.as_str()))
            .collect();
        names
            .into_iter()
            .filter(|p| !m.functions.iter().any(|f| name_matches(p, &f.name)))
            .map(|p| format!("config: function {p} is not in the program; ignored"))
            .collect()
    }
}

fn name_matches(pattern: &str, name: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => name.starts_with(prefix),
        None => pattern == name,
    }
}

/// Allocations holding keys, data about to be encrypted, or freshly
/// decrypted data.
pub fn tag_high_risk(
    m: &SirModule,
    cg: &CallGraph,
    vfg: &ValueFlowGraph,
    cfg: &BarrierConfig,
) -> BTreeSet<ValueId> {
    let mut tagged = BTreeSet::new();
    for e in &cg.edges {
        let name = &m.function(e.callee).name;
        for entry in cfg.high_risk.iter().filter(|h| name_matches(&h.function, name)) {
            let inst = m.inst(e.site);
            match entry.position {
                RolePosition::Param(i) => {
                    let Some(arg) = inst.call_args().nth(i) else { continue };
                    // Allocations flowing into the argument.
                    let mut seen = HashSet::new();
                    let mut stack = vec![vfg.get_def_node(arg)];
                    while let Some(n) = stack.pop() {
                        if !seen.insert(n) {
                            continue;
                        }
                        let node = vfg.node(n);
                        if node.kind == NodeKind::Addr {
                            tagged.insert(node.value.unwrap());
                        }
                        stack.extend(vfg.data_preds(n).iter().copied());
                    }
                    if entry.role == Role::Decrypted {
                        tag_forward(m, vfg, arg, &mut tagged);
                    }
                }
                RolePosition::Return => {
                    if let Some(res) = inst.result {
                        tag_forward(m, vfg, res, &mut tagged);
                    }
                }
            }
        }
    }
    tagged
}

/// Allocations that come to hold data derived from `seed`.
fn tag_forward(m: &SirModule, vfg: &ValueFlowGraph, seed: ValueId, tagged: &mut BTreeSet<ValueId>) {
    let (st, _) = ptr_taint(m, vfg, seed, TaintOptions::default());
    tagged.extend(st.tainted.into_iter().filter(|v| is_allocation_value(m, *v)));
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Risk {
    High,
    Normal,
}

impl Risk {
    pub fn name(self) -> &'static str {
        match self {
            Risk::High => "high",
            Risk::Normal => "normal",
        }
    }
}

#[derive(Clone, Debug)]
pub struct LeakFinding {
    pub pattern: Pattern,
    pub risk: Risk,
    pub sink: TaintSink,
    /// Allocation node the leaked data comes from.
    pub source: NodeId,
    /// Source first, sink last.
    pub path: Vec<NodeId>,
    pub notes: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TrackLimits {
    pub max_paths: usize,
    pub max_path_len: usize,
    /// Search steps per sink, counting dead ends.
    pub max_steps: usize,
}

pub const DEFAULT_MAX_PATHS: usize = 256;
pub const DEFAULT_MAX_PATH_LEN: usize = 512;
/// Enough steps to walk `DEFAULT_MAX_PATHS` paths of maximal length.
pub const DEFAULT_MAX_STEPS: usize = DEFAULT_MAX_PATHS * DEFAULT_MAX_PATH_LEN;

impl Default for TrackLimits {
    fn default() -> Self {
        TrackLimits {
            max_paths: DEFAULT_MAX_PATHS,
            max_path_len: DEFAULT_MAX_PATH_LEN,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

/// Which nodes the tracker stops at.
pub struct TrackContext<'a> {
    pub m: &'a SirModule,
    pub vfg: &'a ValueFlowGraph,
    pub table: &'a InsensitiveDataTable,
    barrier_funcs: Vec<bool>,
    /// Nodes from which an allocation or barrier node is reachable backward;
    /// the search never enters any other node.
    useful: Vec<bool>,
}

impl<'a> TrackContext<'a> {
    pub fn new(
        m: &'a SirModule,
        vfg: &'a ValueFlowGraph,
        table: &'a InsensitiveDataTable,
        cfg: &BarrierConfig,
    ) -> Self {
        let barrier_funcs: Vec<bool> = m.functions.iter().map(|f| cfg.is_barrier(&f.name)).collect();
        let in_barrier = |n: NodeId| vfg.node(n).func.is_some_and(|f| barrier_funcs[f.0 as usize]);
        let mut data_succs = vec![Vec::new(); vfg.len()];
        for n in vfg.node_ids() {
            for p in vfg.data_preds(n) {
                data_succs[p.0 as usize].push(n);
            }
        }
        let mut useful = vec![false; vfg.len()];
        let mut queue: VecDeque<NodeId> = vfg
            .node_ids()
            .filter(|&n| vfg.node(n).kind == NodeKind::Addr || in_barrier(n))
            .collect();
        for n in &queue {
            useful[n.0 as usize] = true;
        }
        while let Some(n) = queue.pop_front() {
            for s in &data_succs[n.0 as usize] {
                if !useful[s.0 as usize] {
                    useful[s.0 as usize] = true;
                    queue.push_back(*s);
                }
            }
        }
        TrackContext {
            m,
            vfg,
            table,
            barrier_funcs,
            useful,
        }
    }

    /// Is `n` inside a barrier function? Such nodes end the search, including
    /// the sink itself: a barrier writing its output is not a leak.
    pub fn is_cut(&self, n: NodeId) -> bool {
        match self.vfg.node(n).func {
            Some(f) => self.barrier_funcs[f.0 as usize],
            None => false,
        }
    }

    pub fn is_alloc(&self, n: NodeId) -> bool {
        self.vfg.node(n).kind == NodeKind::Addr
    }

    pub fn is_reportable(&self, n: NodeId) -> bool {
        self.is_alloc(n) && !self.table.contains(self.vfg.node(n).value.unwrap())
    }
}

struct Search<'c, 'a> {
    cx: &'c TrackContext<'a>,
    limits: TrackLimits,
    on_path: HashSet<NodeId>,
    path: Vec<NodeId>,
    found: Vec<Vec<NodeId>>,
    steps: usize,
    truncated: Option<String>,
    long_paths: bool,
}

impl Search<'_, '_> {
    /// Explores every simple path extending the current one through `n`.
    /// Returns whether some extension reaches an allocation or a barrier, in
    /// which case nothing shallower is a source.
    fn visit(&mut self, n: NodeId) -> bool {
        if self.truncated.is_some() {
            return true;
        }
        if self.cx.is_cut(n) {
            return true;
        }
        self.steps += 1;
        if self.steps > self.limits.max_steps {
            self.truncated = Some(format!("search stopped after {} steps", self.limits.max_steps));
            return true;
        }
        self.path.push(n);
        self.on_path.insert(n);
        let mut deeper = false;
        if self.path.len() < self.limits.max_path_len {
            for &p in self.cx.vfg.data_preds(n) {
                if self.cx.useful[p.0 as usize] && !self.on_path.contains(&p) {
                    deeper |= self.visit(p);
                }
            }
        } else if self.cx.vfg.data_preds(n).iter().any(|p| self.cx.useful[p.0 as usize]) {
            self.long_paths = true;
        }
        let is_alloc = self.cx.is_alloc(n);
        if is_alloc && !deeper && self.cx.is_reportable(n) && self.truncated.is_none() {
            if self.found.len() == self.limits.max_paths {
                self.truncated = Some(format!("stopped after {} paths", self.limits.max_paths));
            } else {
                self.found.push(self.path.iter().rev().copied().collect());
            }
        }
        self.path.pop();
        self.on_path.remove(&n);
        deeper || is_alloc
    }
}

/// Every source path for one sink, source first. The second element is a
/// truncation note, if a cap was hit.
pub fn track_sink(cx: &TrackContext, sink: &TaintSink, limits: TrackLimits) -> (Vec<Vec<NodeId>>, Vec<String>) {
    let mut s = Search {
        cx,
        limits,
        on_path: HashSet::new(),
        path: Vec::new(),
        found: Vec::new(),
        steps: 0,
        truncated: None,
        long_paths: false,
    };
    s.visit(sink.node);
    let mut notes = Vec::new();
    if let Some(t) = s.truncated {
        notes.push(format!("{} sink at {}: path enumeration truncated, {t}", sink.pattern, sink.loc));
    }
    if s.long_paths {
        notes.push(format!(
            "{} sink at {}: paths longer than {} nodes were not followed",
            sink.pattern, sink.loc, limits.max_path_len
        ));
    }
    (s.found, notes)
}

/// Findings for every sink, in a fixed order independent of scheduling.
pub fn back_track(
    cx: &TrackContext,
    sinks: &[TaintSink],
    high_risk: &BTreeSet<ValueId>,
    limits: TrackLimits,
) -> (Vec<LeakFinding>, Vec<String>) {
    let per_sink: Vec<(Vec<LeakFinding>, Vec<String>)> = sinks
        .par_iter()
        .map(|sink| {
            let (paths, notes) = track_sink(cx, sink, limits);
            let findings = paths
                .into_iter()
                .map(|path| {
                    debug_assert!(path_is_valid(cx.vfg, &path));
                    let source = path[0];
                    let v = cx.vfg.node(source).value.unwrap();
                    let mut notes = Vec::new();
                    if sink.pattern == Pattern::P5 {
                        notes.push("unchecked-malloc".to_string());
                    }
                    if let SeedOrigin::Tuple(t) = &sink.origin {
                        if t.via_struct_field {
                            notes.push("struct-field".to_string());
                        }
                    }
                    LeakFinding {
                        pattern: sink.pattern,
                        risk: if high_risk.contains(&v) { Risk::High } else { Risk::Normal },
                        sink: sink.clone(),
                        source,
                        path,
                        notes,
                    }
                })
                .collect();
            (findings, notes)
        })
        .collect();
    let mut findings = Vec::new();
    let mut diagnostics = Vec::new();
    for (f, d) in per_sink {
        findings.extend(f);
        diagnostics.extend(d);
    }
    (findings, diagnostics)
}

/// Every consecutive pair is a graph edge.
pub fn path_is_valid(vfg: &ValueFlowGraph, path: &[NodeId]) -> bool {
    path.windows(2).all(|w| vfg.succs(w[0]).iter().any(|(s, _)| *s == w[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_call_graph, build_vfg};
    use crate::points_to::solve_points_to;
    use crate::sir::{collect_insensitive, parse_sir, Opcode};
    use crate::taint::SinkKind;

    struct Fixture {
        m: SirModule,
        cg: CallGraph,
        vfg: ValueFlowGraph,
        table: InsensitiveDataTable,
    }

    fn fixture(text: &str) -> Fixture {
        let m = parse_sir(text).unwrap();
        let pts = solve_points_to(&m);
        let cg = build_call_graph(&m, &pts);
        let vfg = build_vfg(&m, &cg, &pts);
        let (table, _) = collect_insensitive(&m);
        Fixture { m, cg, vfg, table }
    }

    /// A store sink at the last store or memcpy of `func`.
    fn last_store_sink(fx: &Fixture, func: &str) -> TaintSink {
        let f = fx.m.function_by_name(func).unwrap();
        let (r, inst) = fx
            .m
            .instructions()
            .filter(|(r, i)| r.func == f && i.is_store_like())
            .last()
            .unwrap();
        TaintSink {
            node: fx.vfg.inst_node(r).unwrap(),
            pattern: Pattern::P1,
            seed: inst.store_parts().1,
            origin: SeedOrigin::Malloc(inst.store_parts().1),
            kind: if inst.opcode == Opcode::Store { SinkKind::Store } else { SinkKind::Memcpy },
            stored_value: inst.store_parts().0,
            inst: r,
            loc: fx.m.inst_loc(r),
        }
    }

    fn sources(fx: &Fixture, cfg: &BarrierConfig, sink: &TaintSink) -> Vec<String> {
        let cx = TrackContext::new(&fx.m, &fx.vfg, &fx.table, cfg);
        let (paths, notes) = track_sink(&cx, sink, TrackLimits::default());
        assert!(notes.is_empty(), "{notes:?}");
        for p in &paths {
            assert!(path_is_valid(&fx.vfg, p));
            assert_eq!(*p.last().unwrap(), sink.node);
        }
        let mut got: Vec<String> = paths.iter().map(|p| fx.vfg.node(p[0]).label.clone()).collect();
        assert_eq!(got, brute_force(&cx, sink).iter().map(|p| fx.vfg.node(p[0]).label.clone()).collect::<Vec<_>>());
        got.sort();
        got
    }

    /// Enumerates all simple backward paths first, then keeps the ones ending
    /// at a reportable allocation with no extension reaching an allocation
    /// or a barrier.
    fn brute_force(cx: &TrackContext, sink: &TaintSink) -> Vec<Vec<NodeId>> {
        fn all(cx: &TrackContext, path: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
            out.push(path.clone());
            let last = *path.last().unwrap();
            for &p in cx.vfg.data_preds(last) {
                if !path.contains(&p) {
                    path.push(p);
                    all(cx, path, out);
                    path.pop();
                }
            }
        }
        let mut paths = Vec::new();
        all(cx, &mut vec![sink.node], &mut paths);
        let clean = |p: &Vec<NodeId>| p.iter().all(|n| !cx.is_cut(*n));
        let mut out: Vec<Vec<NodeId>> = paths
            .iter()
            .filter(|p| clean(p) && cx.is_reportable(*p.last().unwrap()))
            .filter(|p| {
                !paths.iter().any(|q| {
                    q.len() > p.len()
                        && q.starts_with(p)
                        && q[p.len()..].iter().any(|n| cx.is_alloc(*n) || cx.is_cut(*n))
                })
            })
            .map(|p| p.iter().rev().copied().collect())
            .collect();
        out.sort();
        let mut got = track_sink(cx, sink, TrackLimits::default()).0;
        got.sort();
        assert_eq!(got, out);
        out
    }

    const HEX_LEAK: &str = r#"
declare @ocall_print(ptr)
declare @aes_encrypt(ptr, ptr)
define @hexify(%dst: ptr, %src: ptr) {
entry:
  %b = load %src
  %h = xor %b, 48
  store %h, %dst
  ret
}
define @ecall_run(%o: ptr) {
entry:
  %key = alloca 16                 !loc "enc.c:3"
  %buf = alloca 16
  %hex = alloca 32                 !loc "enc.c:5"
  call @aes_encrypt(%buf, %key)
  call @hexify(%hex, %key)
  %x = load %hex
  store %x, %o                     !loc "enc.c:8"
  ret
}
"#;

    #[test]
    fn intermediate_buffer_is_a_waypoint() {
        let fx = fixture(HEX_LEAK);
        let sink = last_store_sink(&fx, "ecall_run");
        assert_eq!(sources(&fx, &BarrierConfig::default(), &sink), vec!["ecall_run:%key"]);
        let tagged = tag_high_risk(&fx.m, &fx.cg, &fx.vfg, &BarrierConfig::default());
        let names: Vec<_> = tagged.iter().map(|v| fx.m.value_label(*v)).collect();
        assert_eq!(names, vec!["ecall_run:%key", "ecall_run:%buf"]);
    }

    #[test]
    fn insensitive_source_suppresses_waypoints_too() {
        let text = HEX_LEAK.replace("  %buf = alloca 16\n", "  %buf = alloca 16\n  annotate %key, \"INSENSITIVE\"\n");
        let fx = fixture(&text);
        let sink = last_store_sink(&fx, "ecall_run");
        assert!(sources(&fx, &BarrierConfig::default(), &sink).is_empty());
    }

    #[test]
    fn barrier_cuts_flow_through_its_body() {
        let text = HEX_LEAK.replace("@hexify", "@seal");
        let fx = fixture(&text);
        let sink = last_store_sink(&fx, "ecall_run");
        assert!(sources(&fx, &BarrierConfig::default(), &sink).is_empty());
        // Without the barrier configured, the key is found again.
        let cfg = BarrierConfig { barriers: vec![], ..BarrierConfig::default() };
        assert_eq!(sources(&fx, &cfg, &sink), vec!["ecall_run:%key"]);
    }

    #[test]
    fn barrier_matching_is_exact_or_prefix() {
        let cfg = BarrierConfig::default();
        assert!(cfg.is_barrier("seal"));
        assert!(cfg.is_barrier("aes_gcm_encrypt"));
        assert!(!cfg.is_barrier("sealog"));
        assert!(!cfg.is_barrier("my_encrypt"));
    }

    const DIAMOND: &str = r#"
define @e(%out: ptr, %c: val) {
entry:
  %s = alloca 8
  %v = load %s
  condbr %c, a, b
a:
  %x = add %v, 1
  br join
b:
  %y = mul %v, 3
  br join
join:
  %m = phi [%x, a], [%y, b]
  store %m, %out
  ret
}
"#;

    #[test]
    fn diamond_gives_two_paths() {
        let fx = fixture(DIAMOND);
        let sink = last_store_sink(&fx, "e");
        assert_eq!(sources(&fx, &BarrierConfig::default(), &sink), vec!["e:%s", "e:%s"]);
    }

    #[test]
    fn caps_are_reported() {
        let fx = fixture(DIAMOND);
        let sink = last_store_sink(&fx, "e");
        let cx = TrackContext::new(&fx.m, &fx.vfg, &fx.table, &BarrierConfig::default());
        let limits = TrackLimits { max_paths: 1, ..TrackLimits::default() };
        let (paths, notes) = track_sink(&cx, &sink, limits);
        assert_eq!(paths.len(), 1);
        assert!(notes[0].contains("truncated"), "{notes:?}");
        let limits = TrackLimits { max_path_len: 2, ..TrackLimits::default() };
        let (paths, notes) = track_sink(&cx, &sink, limits);
        assert!(paths.is_empty());
        assert!(notes[0].contains("longer than 2"), "{notes:?}");
    }

    #[test]
    fn ecall_input_copied_out_is_reported_at_the_local() {
        let fx = fixture(
            r#"
define @e(%in: ptr, %out: ptr) {
entry:
  %local = alloca 16
  memcpy %local, %in, 16
  memcpy %out, %local, 16
  ret
}
"#,
        );
        let sink = last_store_sink(&fx, "e");
        assert_eq!(sources(&fx, &BarrierConfig::default(), &sink), vec!["e:%local"]);
    }

    #[test]
    fn decrypted_return_tags_its_destination() {
        let fx = fixture(
            r#"
declare @aes_decrypt(ptr, ptr) -> ptr
define @e(%ct: ptr) {
entry:
  %k = alloca 16
  %slot = alloca 8
  %other = alloca 8
  %pt = call @aes_decrypt(%ct, %k)
  store %pt, %slot
  ret
}
"#,
        );
        let tagged = tag_high_risk(&fx.m, &fx.cg, &fx.vfg, &BarrierConfig::default());
        let names: Vec<_> = tagged.iter().map(|v| fx.m.value_label(*v)).collect();
        assert_eq!(names, vec!["e:%k", "e:%slot"]);
        let none = fixture("define @e() {\nentry:\n  %a = alloca 4\n  ret\n}\n");
        assert!(tag_high_risk(&none.m, &none.cg, &none.vfg, &BarrierConfig::default()).is_empty());
    }

    #[test]
    fn config_file_replaces_defaults() {
        let cfg = BarrierConfig::from_json(
            r#"{"barriers": ["wrap"], "high_risk": [{"function": "kdf", "param": "return", "role": "decrypted"},
                {"function": "mac", "param": 2, "role": "key"}]}"#,
        )
        .unwrap();
        assert!(cfg.is_barrier("wrap") && !cfg.is_barrier("seal"));
        assert_eq!(cfg.high_risk[0].position, RolePosition::Return);
        assert_eq!(cfg.high_risk[1].position, RolePosition::Param(2));
        let m = parse_sir("declare @mac(ptr, ptr, ptr)\n").unwrap();
        assert_eq!(cfg.unmatched(&m).len(), 2);
        assert!(BarrierConfig::default().unmatched(&m).is_empty());
        assert!(BarrierConfig::from_json(r#"{"high_risk": [{"function": "f", "param": "ret", "role": "key"}]}"#).is_err());
        assert!(BarrierConfig::from_json(r#"{"barrier": []}"#).is_err());
    }

    #[test]
    fn sink_inside_barrier_is_not_a_leak() {
        let fx = fixture(
            r#"
define @seal(%out: ptr) {
entry:
  %k = alloca 8
  %v = load %k
  store %v, %out
  ret
}
"#,
        );
        let sink = last_store_sink(&fx, "seal");
        assert!(sources(&fx, &BarrierConfig::default(), &sink).is_empty());
    }
}
