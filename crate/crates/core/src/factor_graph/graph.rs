use super::CopInstance;

/// One undirected factor-graph edge. The same id indexes both message
/// directions (variable to function and function to variable).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub var: usize,
    pub function: usize,
    /// Position of `var` in the function's scope.
    pub slot: usize,
}

/// Bipartite variable/function adjacency with a dense edge index.
///
/// Edge ids are assigned by function index, then scope position, so two equal
/// instances always produce identical ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorGraph {
    domains: Vec<usize>,
    edges: Vec<Edge>,
    var_edges: Vec<Vec<usize>>,
    function_edges: Vec<Vec<usize>>,
}

impl FactorGraph {
    pub fn new(instance: &CopInstance) -> Self {
        let mut edges = Vec::new();
        let mut var_edges = vec![Vec::new(); instance.num_variables()];
        let mut function_edges = Vec::with_capacity(instance.num_functions());
        for (function, f) in instance.functions().iter().enumerate() {
            let mut ids = Vec::with_capacity(f.arity());
            for (slot, &var) in f.scope.iter().enumerate() {
                let id = edges.len();
                edges.push(Edge {
                    var,
                    function,
                    slot,
                });
                var_edges[var].push(id);
                ids.push(id);
            }
            function_edges.push(ids);
        }
        Self {
            domains: instance.domains().to_vec(),
            edges,
            var_edges,
            function_edges,
        }
    }

    pub fn num_variables(&self) -> usize {
        self.var_edges.len()
    }

    pub fn num_functions(&self) -> usize {
        self.function_edges.len()
    }

    /// Number of edges per message direction.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> Edge {
        self.edges[id]
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn domain(&self, var: usize) -> usize {
        self.domains[var]
    }

    /// Domain size of the variable at one end of an edge.
    pub fn edge_domain(&self, id: usize) -> usize {
        self.domains[self.edges[id].var]
    }

    /// Edge ids incident to a variable, ascending.
    pub fn var_edges(&self, var: usize) -> &[usize] {
        &self.var_edges[var]
    }

    /// Edge ids of a function, in scope order.
    pub fn function_edges(&self, function: usize) -> &[usize] {
        &self.function_edges[function]
    }

    pub fn degree(&self, var: usize) -> usize {
        self.var_edges[var].len()
    }

    /// Functions adjacent to a variable.
    pub fn var_neighbors(&self, var: usize) -> impl Iterator<Item = usize> + '_ {
        self.var_edges[var].iter().map(|&e| self.edges[e].function)
    }

    /// Variables in a function's scope.
    pub fn function_neighbors(&self, function: usize) -> impl Iterator<Item = usize> + '_ {
        self.function_edges[function]
            .iter()
            .map(|&e| self.edges[e].var)
    }

    /// True when the bipartite graph is a forest.
    pub fn is_acyclic(&self) -> bool {
        let nodes = self.num_variables() + self.num_functions();
        let mut parent: Vec<usize> = (0..nodes).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            let a = find(&mut parent, e.var);
            let b = find(&mut parent, self.num_variables() + e.function);
            if a == b {
                return false;
            }
            parent[a] = b;
        }
        true
    }
}
