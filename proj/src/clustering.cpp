#include "dcvae/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dcvae/rng.hpp"

namespace dcvae {

WordEmbeddings parse_embeddings(const std::string& text, const Vocab& vocab, const std::string& origin) {
  WordEmbeddings emb;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> v;
    std::string field;
    while (ls >> field) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": bad number '" + field + "'");
      }
    }
    if (v.empty()) throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": no vector values");
    if (emb.dim == 0) emb.dim = v.size();
    if (v.size() != emb.dim) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected " + std::to_string(emb.dim) +
                               " values, got " + std::to_string(v.size()));
    }
    if (vocab.contains(token) && !Vocab::is_special(vocab.id(token))) emb.vectors[vocab.id(token)] = std::move(v);
  }
  if (emb.dim == 0) throw std::runtime_error(origin + ": no embeddings");
  return emb;
}

WordEmbeddings load_embeddings(const std::filesystem::path& path, const Vocab& vocab) {
  return parse_embeddings(read_file(path), vocab, path.string());
}

void save_embeddings(const std::vector<std::pair<std::string, std::vector<double>>>& rows,
                     const std::filesystem::path& path) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const auto& [tok, v] : rows) {
    os << tok;
    for (double x : v) os << ' ' << x;
    os << '\n';
  }
  write_file_atomic(path, os.str());
}

WordEmbeddings complete_embeddings(const WordEmbeddings& emb, std::span<const int> ids, std::uint64_t seed) {
  if (emb.dim == 0) throw std::invalid_argument("complete_embeddings: embedding dimension unknown");
  WordEmbeddings out = emb;
  Rng rng(seed);
  for (int id : ids) {
    if (out.contains(id)) continue;
    std::vector<double> v(emb.dim);
    for (double& x : v) x = rng.uniform(-0.1, 0.1);
    out.vectors.emplace(id, std::move(v));
  }
  return out;
}

int ClusterModel::cluster_of(int latent_id) const {
  auto it = assignment.find(latent_id);
  if (it == assignment.end()) throw std::invalid_argument("cluster_of: id " + std::to_string(latent_id) + " is not in the latent space");
  return it->second;
}

void ClusterModel::rebuild_members() {
  members.assign(k, {});
  for (const auto& [id, c] : assignment) {
    if (c < 0 || static_cast<std::size_t>(c) >= k) throw std::invalid_argument("cluster model: cluster index out of range");
    members[static_cast<std::size_t>(c)].push_back(id);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (members[c].empty()) throw std::invalid_argument("cluster model: cluster " + std::to_string(c) + " is empty");
  }
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest(const std::vector<std::vector<double>>& centroids, const std::vector<double>& p) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = sq_dist(centroids[c], p);
    if (d < best_d) best_d = d, best = c;
  }
  return best;
}

}  // namespace

ClusterModel kmeans(const WordEmbeddings& embeddings, std::span<const int> latent_ids, long long k_in,
                    const KMeansOptions& options) {
  if (k_in <= 0) throw std::invalid_argument("kmeans: K must be positive");
  if (static_cast<std::size_t>(k_in) > latent_ids.size()) {
    throw std::invalid_argument("kmeans: K = " + std::to_string(k_in) + " exceeds " + std::to_string(latent_ids.size()) + " points");
  }
  if (options.max_iters < 1) throw std::invalid_argument("kmeans: max_iters must be at least 1");
  const auto k = static_cast<std::size_t>(k_in);
  const std::size_t n = latent_ids.size();

  std::vector<std::vector<double>> pts;
  pts.reserve(n);
  for (int id : latent_ids) {
    auto it = embeddings.vectors.find(id);
    if (it == embeddings.vectors.end()) throw std::invalid_argument("kmeans: no embedding for latent id " + std::to_string(id));
    std::vector<double> v = it->second;
    if (options.normalize) {
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (double& x : v) x /= norm;
    }
    pts.push_back(std::move(v));
  }

  // k-means++ seeding
  Rng rng(options.seed);
  std::vector<std::vector<double>> centroids;
  std::vector<bool> chosen(n, false);
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  centroids.push_back(pts[first]);
  chosen[first] = true;
  std::vector<double> d2(n);
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = chosen[i] ? 0.0 : sq_dist(pts[i], centroids[nearest(centroids, pts[i])]);
      total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        if (u < d2[i]) break;
        u -= d2[i];
      }
    } else {
      // every remaining point coincides with a centroid
      for (std::size_t i = 0; i < n && pick == n; ++i)
        if (!chosen[i]) pick = i;
    }
    chosen[pick] = true;
    centroids.push_back(pts[pick]);
  }

  std::vector<std::size_t> assign(n, 0);
  std::vector<double> history;
  for (int iter = 0; iter < options.max_iters; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = nearest(centroids, pts[i]);
      if (c != assign[i]) changed = true;
      assign[i] = c;
    }
    // Repair empty clusters by moving in the point farthest from its centroid.
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<std::size_t> sizes(k, 0);
      for (std::size_t a : assign) ++sizes[a];
      if (sizes[c] > 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (sizes[assign[i]] < 2) continue;
        const double d = sq_dist(pts[i], centroids[assign[i]]);
        if (d > far_d) far_d = d, far = i;
      }
      assign[far] = c;
      centroids[c] = pts[far];
      changed = true;
    }
    std::vector<std::vector<double>> next(k, std::vector<double>(pts[0].size(), 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < pts[i].size(); ++j) next[assign[i]][j] += pts[i][j];
    }
    for (std::size_t c = 0; c < k; ++c)
      for (double& x : next[c]) x /= static_cast<double>(counts[c]);
    centroids = std::move(next);

    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) sse += sq_dist(pts[i], centroids[assign[i]]);
    if (!history.empty() && sse > history.back() + 1e-9 * std::max(1.0, history.back())) {
      throw std::logic_error("kmeans: within-cluster SSE increased from " + std::to_string(history.back()) + " to " +
                             std::to_string(sse));
    }
    history.push_back(sse);
    if (!changed) break;
  }

  ClusterModel model;
  model.k = k;
  model.centroids = std::move(centroids);
  model.sse_history = std::move(history);
  for (std::size_t i = 0; i < n; ++i) model.assignment[latent_ids[i]] = static_cast<int>(assign[i]);
  model.rebuild_members();
  return model;
}

double within_cluster_sse(const WordEmbeddings& embeddings, const ClusterModel& model) {
  double sse = 0.0;
  for (const auto& [id, c] : model.assignment) {
    sse += sq_dist(embeddings.vectors.at(id), model.centroids.at(static_cast<std::size_t>(c)));
  }
  return sse;
}

void save_clusters(const ClusterModel& model, const Vocab& vocab, const std::filesystem::path& path) {
  std::string out;
  for (const auto& [id, c] : model.assignment) out += vocab.token(id) + ' ' + std::to_string(c) + '\n';
  write_file_atomic(path, out);
}

ClusterModel load_clusters(const std::filesystem::path& path, const Vocab& vocab) {
  std::istringstream is(read_file(path));
  ClusterModel model;
  std::string line;
  std::size_t lineno = 0;
  int max_c = -1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    int c = -1;
    if (!(ls >> token >> c) || c < 0) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 'token cluster'");
    }
    if (!vocab.contains(token)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": token '" + token + "' not in vocabulary");
    }
    model.assignment[vocab.id(token)] = c;
    max_c = std::max(max_c, c);
  }
  if (max_c < 0) throw std::runtime_error(path.string() + ": no cluster assignments");
  model.k = static_cast<std::size_t>(max_c) + 1;
  try {
    model.rebuild_members();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return model;
}

}  // namespace dcvae
