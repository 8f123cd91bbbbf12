#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "casif/corpus.hpp"
#include "casif/graph.hpp"
#include "casif/tensor.hpp"

namespace casif {

enum class Variant : std::uint8_t {
  kCasif = 0,
  /// Ablation: plain per-position attention, scores from the attended vector directly.
  kCasifS = 1,
};

enum class LossVariant : std::uint8_t {
  /// -[log p_label + sum_{i != label} log(1 - p_i)]
  kEq13 = 0,
  /// -log p_label
  kSoftmaxCe = 1,
};

/// Input of the current-interest MLP.
enum class CurrentInterestInput : std::uint8_t {
  kLastItem = 0,
  kGlobalInterest = 1,
};

struct HyperParams {
  std::size_t dim = 100;
  std::size_t gnn_steps = 1;
  LossVariant loss = LossVariant::kEq13;
  Variant variant = Variant::kCasif;
  CurrentInterestInput current_input = CurrentInterestInput::kLastItem;

  /// Throws ConfigError.
  void validate() const;
  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

std::string_view to_string(Variant v);
std::string_view to_string(LossVariant v);
std::string_view to_string(CurrentInterestInput v);
Variant parse_variant(std::string_view text);
LossVariant parse_loss_variant(std::string_view text);
CurrentInterestInput parse_current_input(std::string_view text);

/// Learnable tensors in their fixed serialization order. Bias vectors are 1 x d.
enum class Param : std::size_t {
  kEmbedding,    // |V| x d, shared by input lookup and candidate scoring
  kInWeight,     // d x d
  kOutWeight,    // d x d
  kInBiasPre,    // added before aggregation over incoming edges
  kOutBiasPre,
  kInBiasPost,   // added after aggregation
  kOutBiasPost,
  kUpdateGateW,  // 2d x d
  kResetGateW,   // 2d x d
  kCandidateW,   // 2d x d
  kUpdateGateP,  // d x d
  kResetGateP,   // d x d
  kCandidateP,   // d x d
  kAttnQuery,    // 1 x d
  kAttnItemW,    // d x d
  kAttnLastW,    // d x d
  kAttnMeanW,    // d x d
  kAttnBias,
  kGeneralMlpW,  // d x d
  kCurrentMlpW,  // d x d
  kGeneralMlpB,
  kCurrentMlpB,
  kSimpleAttnW,  // d x d, ablation only
  kSimpleAttnB,  // ablation only
  kCount,
};

inline constexpr std::size_t kNumParams = static_cast<std::size_t>(Param::kCount);

std::string_view param_name(Param p);

/// Every learnable tensor of the model, or a gradient with the same shapes.
/// Tensors a variant does not own are 0 x 0.
class ParamSet {
 public:
  ParamSet() = default;
  /// All-zero tensors shaped for (num_items, hp).
  ParamSet(std::size_t num_items, const HyperParams& hp);

  Matrix& operator[](Param p) { return tensors_[static_cast<std::size_t>(p)]; }
  const Matrix& operator[](Param p) const { return tensors_[static_cast<std::size_t>(p)]; }
  Matrix& at(std::size_t i) { return tensors_[i]; }
  const Matrix& at(std::size_t i) const { return tensors_[i]; }

  std::size_t num_items() const { return num_items_; }
  std::size_t dim() const { return dim_; }
  Variant variant() const { return variant_; }
  std::size_t total_size() const;

  ParamSet zeros_like() const;
  void add(const ParamSet& other);
  bool same_shape(const ParamSet& other) const;
  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::size_t num_items_ = 0;
  std::size_t dim_ = 0;
  Variant variant_ = Variant::kCasif;
  std::array<Matrix, kNumParams> tensors_;
};

/// Every entry i.i.d. N(0, 0.1^2), drawn tensor by tensor in Param order.
ParamSet init_params(std::size_t num_items, const HyperParams& hp, std::uint64_t seed);

struct GnnStepTrace {
  Matrix state;      // q x d input node states
  Matrix message;    // q x 2d
  Matrix update;     // z
  Matrix reset;      // r
  Matrix candidate;  // h tilde
};

struct AttentionResult {
  Matrix gates;  // n x d sigmoid activations
  Vector alpha;  // n, unnormalized
  Vector attended;
};

struct InterestResult {
  Vector general;  // a_s
  Vector current;  // a_t
};

struct ScoreResult {
  Vector logits;
  Vector probs;
};

struct ForwardTrace {
  SessionGraph graph;
  ItemIndex label = 0;
  std::vector<GnnStepTrace> steps;
  Matrix node_latents;      // q x d
  Matrix position_latents;  // n x d
  Vector session_mean;      // c_s (full model only)
  AttentionResult attention;
  InterestResult interest;  // full model only
  Vector query;             // vector dotted with every embedding row
  ScoreResult scores;
  double loss = 0.0;
};

Matrix ggnn_forward(const SessionGraph& graph, const ParamSet& params, const HyperParams& hp);
Vector session_mean_pool(const Matrix& position_latents);
AttentionResult attention_global_interest(const Matrix& position_latents,
                                          std::span<const double> last,
                                          std::span<const double> session_mean,
                                          const ParamSet& params);
AttentionResult casif_s_attention(const Matrix& position_latents, const ParamSet& params);
InterestResult interest_mlp(std::span<const double> global_interest, std::span<const double> last,
                            const ParamSet& params, const HyperParams& hp);
ScoreResult score_and_predict(std::span<const double> general, std::span<const double> current,
                              const Matrix& embedding);
/// Logits E * query followed by a max-shifted softmax.
ScoreResult score_query(std::span<const double> query, const Matrix& embedding);

/// Loss of a probability vector.
double loss(std::span<const double> probs, ItemIndex label, LossVariant variant);
/// Same loss evaluated in log space from logits.
double loss_from_logits(std::span<const double> logits, ItemIndex label, LossVariant variant);
/// d loss / d logits.
Vector loss_gradient(std::span<const double> logits, std::span<const double> probs, ItemIndex label,
                     LossVariant variant);

ForwardTrace forward(const PrefixExample& example, const ParamSet& params, const HyperParams& hp);
/// Logits over all items for a prefix; no loss.
Vector score_prefix(std::span<const ItemIndex> prefix, const ParamSet& params, const HyperParams& hp);

/// Gradient of one example in compact form: dense tensors except the
/// embedding, plus the two embedding paths (node lookups and candidates).
struct ExampleGradient {
  ParamSet dense;                     // embedding tensor left 0 x 0
  std::vector<ItemIndex> lookup_items;
  Matrix lookup_grad;                 // q x d, row k belongs to lookup_items[k]
  Vector candidate_coef;              // d loss / d logits, |V|
  Vector candidate_query;             // d
  double loss = 0.0;
};

ExampleGradient example_backward(const ForwardTrace& trace, const ParamSet& params,
                                 const HyperParams& hp);
/// Same, reusing the buffers of out when its shapes already fit.
void example_backward(const ForwardTrace& trace, const ParamSet& params, const HyperParams& hp,
                      ExampleGradient& out);
/// acc += grad. Embedding rows receive the candidate term first, then lookup rows in node order.
void accumulate(const ExampleGradient& grad, ParamSet& acc);
/// Dense gradient of the example loss w.r.t. every parameter.
ParamSet backward(const ForwardTrace& trace, const ParamSet& params, const HyperParams& hp);

double l2_penalty(const ParamSet& params, double lambda);
void add_l2_gradient(const ParamSet& params, double lambda, ParamSet& grads);

/// Central differences (f(x + h) - f(x - h)) / 2h for every coordinate of x.
/// x is perturbed in place and restored.
Vector central_differences(std::span<double> x, const std::function<double()>& f, double h);

ParamSet finite_difference_grad(const PrefixExample& example, const ParamSet& params,
                                const HyperParams& hp, double h = 1e-5);

}  // namespace casif
