#include "ortho/metrics.hpp"
#include "ortho/rng.hpp"
#include "ortho/tensor.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ortho {

using nlohmann::json;

Discrepancy opportunity_discrepancy(const std::vector<int> &preds,
                                    const std::vector<int> &labels,
                                    const std::vector<int> &attrs, int y) {
    if (preds.size() != labels.size() || labels.size() != attrs.size())
        throw std::invalid_argument("opportunity_discrepancy: length mismatch");
    double hit[2] = {0, 0}, n[2] = {0, 0};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != y) continue;
        const int a = attrs[i] ? 1 : 0;
        n[a] += 1;
        hit[a] += preds[i] == y ? 1 : 0;
    }
    if (n[0] == 0 && n[1] == 0)
        throw std::invalid_argument("opportunity_discrepancy: class " +
                                    std::to_string(y) + " absent");
    Discrepancy d;
    d.has_a0 = n[0] > 0;
    d.has_a1 = n[1] > 0;
    d.tpr_a0 = d.has_a0 ? hit[0] / n[0] : 0.0;
    d.tpr_a1 = d.has_a1 ? hit[1] / n[1] : 0.0;
    if (d.has_a0 && d.has_a1) {
        d.value = std::abs(d.tpr_a0 - d.tpr_a1);
    } else {
        d.degenerate = true;
        d.value = d.has_a0 ? d.tpr_a0 : d.tpr_a1; // one-sided recall
    }
    return d;
}

double model_leakage(const std::vector<double> &train_logits,
                     const std::vector<int> &train_attrs,
                     const std::vector<double> &test_logits,
                     const std::vector<int> &test_attrs, int num_classes,
                     const LeakageConfig &cfg) {
    const int n_tr = int(train_attrs.size()), n_te = int(test_attrs.size());
    if (n_tr < 2 || n_te < 1)
        throw std::invalid_argument("model_leakage: too few samples");
    auto has_both = [](const std::vector<int> &a) {
        bool p = false, q = false;
        for (int v : a) (v ? p : q) = true;
        return p && q;
    };
    if (!has_both(train_attrs))
        throw std::invalid_argument(
            "model_leakage: train split contains a single attribute value");

    const int N = num_classes;
    // standardize inputs with train statistics
    std::vector<double> mu(std::size_t(N), 0.0), sd(std::size_t(N), 0.0);
    for (int i = 0; i < n_tr; ++i)
        for (int j = 0; j < N; ++j)
            mu[std::size_t(j)] += train_logits[std::size_t(i) * N + std::size_t(j)];
    for (auto &m : mu) m /= double(n_tr);
    for (int i = 0; i < n_tr; ++i)
        for (int j = 0; j < N; ++j) {
            const double v =
                train_logits[std::size_t(i) * N + std::size_t(j)] - mu[std::size_t(j)];
            sd[std::size_t(j)] += v * v;
        }
    for (auto &s : sd) s = std::max(std::sqrt(s / double(n_tr)), 1e-12);
    auto standardize = [&](const std::vector<double> &raw, int count) {
        std::vector<double> out(raw.begin(), raw.begin() + std::size_t(count) * N);
        for (int i = 0; i < count; ++i)
            for (int j = 0; j < N; ++j)
                out[std::size_t(i) * N + std::size_t(j)] =
                    (out[std::size_t(i) * N + std::size_t(j)] - mu[std::size_t(j)]) /
                    sd[std::size_t(j)];
        return out;
    };
    const auto xs_tr = standardize(train_logits, n_tr);
    const auto xs_te = standardize(test_logits, n_te);

    const int H = cfg.hidden;
    Rng rng(cfg.seed);
    const double s1 = 1.0 / std::sqrt(double(N)), s2 = 1.0 / std::sqrt(double(H));
    std::vector<double> w1(std::size_t(N) * H), b1(std::size_t(H), 0.0),
        w2(std::size_t(H), 0.0);
    for (auto &v : w1) v = rng.uniform(-s1, s1);
    for (auto &v : w2) v = rng.uniform(-s2, s2);
    double b2 = 0.0;

    std::vector<double> targets(std::size_t(n_tr), 0.0);
    for (int i = 0; i < n_tr; ++i) targets[std::size_t(i)] = train_attrs[std::size_t(i)];
    const auto weights = balance_weights(targets);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Graph g;
        Tensor x = g.leaf({n_tr, N}, xs_tr);
        Tensor tw1 = g.leaf({N, H}, w1);
        Tensor tb1 = g.leaf({H}, b1);
        Tensor tw2 = g.leaf({H, 1}, w2);
        Tensor tb2 = g.scalar(b2);
        Tensor h = relu(row_bias(matmul(x, tw1), tb1));
        Tensor s = add(matmul(h, tw2), tb2);
        Tensor t = g.leaf({n_tr, 1}, targets);
        Tensor w = g.leaf({n_tr, 1}, weights);
        Tensor loss = binary_log_loss(s, t, w);
        auto gs = grad(loss, {tw1, tb1, tw2, tb2});
        for (std::size_t i = 0; i < w1.size(); ++i) w1[i] -= cfg.lr * gs[0].data()[i];
        for (std::size_t i = 0; i < b1.size(); ++i) b1[i] -= cfg.lr * gs[1].data()[i];
        for (std::size_t i = 0; i < w2.size(); ++i) w2[i] -= cfg.lr * gs[2].data()[i];
        b2 -= cfg.lr * gs[3].data()[0];
    }

    int hits = 0;
    for (int i = 0; i < n_te; ++i) {
        double score = b2;
        for (int hj = 0; hj < H; ++hj) {
            double a = b1[std::size_t(hj)];
            for (int j = 0; j < N; ++j)
                a += xs_te[std::size_t(i) * N + std::size_t(j)] *
                     w1[std::size_t(j) * H + std::size_t(hj)];
            score += std::max(a, 0.0) * w2[std::size_t(hj)];
        }
        hits += (score > 0.0 ? 1 : 0) == test_attrs[std::size_t(i)] ? 1 : 0;
    }
    return 100.0 * double(hits) / double(n_te);
}

double projection_bias(const std::vector<double> &beta,
                       const std::vector<double> &nu, bool *degenerate) {
    if (beta.size() != nu.size())
        throw std::invalid_argument("projection_bias: dimension mismatch");
    double bb = 0, nn = 0, bn = 0;
    for (std::size_t i = 0; i < beta.size(); ++i) {
        bb += beta[i] * beta[i];
        nn += nu[i] * nu[i];
        bn += beta[i] * nu[i];
    }
    const bool degen = bb < 1e-24 || nn < 1e-24;
    if (degenerate) *degenerate = degen;
    return bn / (std::sqrt(bb) * std::sqrt(nn) + 1e-12);
}

Sensitivity sensitivity_bias(const ConvNet &net, const Dataset &ds,
                             const std::vector<int> &idx, int cls, int layer,
                             const std::vector<double> &nu) {
    Sensitivity out;
    if (idx.empty()) {
        out.degenerate = true;
        return out;
    }
    std::vector<double> cosines;
    bool any_live = false;
    constexpr int kChunk = 32;
    for (std::size_t start = 0; start < idx.size(); start += kChunk) {
        const std::size_t end = std::min(idx.size(), start + kChunk);
        std::vector<int> part(idx.begin() + std::ptrdiff_t(start),
                              idx.begin() + std::ptrdiff_t(end));
        auto grads = net.class_logit_feature_gradient(ds.gather_pixels(part),
                                                      int(part.size()), cls, layer);
        for (const auto &gvec : grads) {
            bool degen = false;
            const double c = projection_bias(gvec, nu, &degen);
            any_live = any_live || !degen;
            cosines.push_back(degen ? 0.0 : c);
        }
    }
    out.samples = int(cosines.size());
    out.degenerate = !any_live;
    double mean = 0;
    for (double c : cosines) mean += c;
    mean /= double(cosines.size());
    double var = 0;
    for (double c : cosines) var += (c - mean) * (c - mean);
    out.mean = mean;
    out.stddev = std::sqrt(var / double(cosines.size()));
    return out;
}

MetricsReport evaluate(const ConvNet &net, const Dataset &ds, const Split &split,
                       const EvalConfig &cfg) {
    MetricsReport r;
    const int N = ds.cfg.num_classes;

    const auto test_labels = ds.labels_of(split.test);
    const auto test_attrs = ds.attrs_of(split.test);
    std::vector<int> preds;
    {
        constexpr int kChunk = 64;
        for (std::size_t start = 0; start < split.test.size(); start += kChunk) {
            const std::size_t end = std::min(split.test.size(), start + kChunk);
            std::vector<int> part(split.test.begin() + std::ptrdiff_t(start),
                                  split.test.begin() + std::ptrdiff_t(end));
            auto p = net.predict(ds.gather_pixels(part), int(part.size()));
            preds.insert(preds.end(), p.begin(), p.end());
        }
    }
    int hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        hits += preds[i] == test_labels[i] ? 1 : 0;
    r.test_accuracy = preds.empty() ? 0.0 : double(hits) / double(preds.size());

    // evaluation probes are trained fresh on the train split's features
    ProbeSet probes =
        train_probes_post_hoc(net, ds, split.train, cfg.concept_layer, cfg.probe);
    const auto nu = probes.bias_direction();

    r.sensitivity_samples_per_class = cfg.sensitivity_samples;
    for (int c = 0; c < N; ++c) {
        ClassMetrics cm;
        cm.cls = c;
        cm.biased = std::find(ds.cfg.biased_classes.begin(),
                              ds.cfg.biased_classes.end(),
                              c) != ds.cfg.biased_classes.end();
        cm.discrepancy = opportunity_discrepancy(preds, test_labels, test_attrs, c);
        cm.projection = projection_bias(probes.scene(c).beta, nu,
                                        &cm.projection_degenerate);
        std::vector<int> cls_idx;
        for (int i : split.test)
            if (ds.samples[std::size_t(i)].label == c &&
                int(cls_idx.size()) < cfg.sensitivity_samples)
                cls_idx.push_back(i);
        cm.sensitivity = sensitivity_bias(net, ds, cls_idx, c, cfg.concept_layer, nu);
        r.per_class.push_back(cm);
    }

    // leakage pool: attribute-balanced per class; missing (class, attr) cells
    // are filled with freshly rendered samples so the split is never one-sided
    std::vector<double> pool_logits;
    std::vector<int> pool_attrs;
    {
        std::vector<double> pool_pixels;
        int pool_count = 0;
        for (int c = 0; c < N; ++c)
            for (int a = 0; a < 2; ++a) {
                int taken = 0;
                for (int i : split.test) {
                    if (taken >= cfg.leakage_per_cell) break;
                    if (ds.samples[std::size_t(i)].label == c &&
                        ds.samples[std::size_t(i)].attr == a) {
                        const auto &px = ds.samples[std::size_t(i)].pixels;
                        pool_pixels.insert(pool_pixels.end(), px.begin(), px.end());
                        pool_attrs.push_back(a);
                        ++taken;
                        ++pool_count;
                    }
                }
                for (; taken < cfg.leakage_per_cell; ++taken) {
                    Sample s = render_sample(
                        c, a, ds.cfg,
                        sub_seed(ds.cfg.seed, "leak-aux",
                                 (std::uint64_t(c) * 2 + std::uint64_t(a)) * 1000 +
                                     std::uint64_t(taken)));
                    pool_pixels.insert(pool_pixels.end(), s.pixels.begin(),
                                       s.pixels.end());
                    pool_attrs.push_back(a);
                    ++pool_count;
                }
            }
        pool_logits = net.logits_of(pool_pixels, pool_count);
    }
    {
        std::vector<int> order(pool_attrs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
        Rng rng(sub_seed(cfg.seed, "leak-split"));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::size_t(rng.next_below(i))]);
        const std::size_t n_tr =
            std::size_t(std::llround(cfg.leakage.train_frac * double(order.size())));
        std::vector<double> ltr, lte;
        std::vector<int> atr, ate;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const int s = order[i];
            const auto b = pool_logits.begin() + std::ptrdiff_t(s) * N;
            if (i < n_tr) {
                ltr.insert(ltr.end(), b, b + N);
                atr.push_back(pool_attrs[std::size_t(s)]);
            } else {
                lte.insert(lte.end(), b, b + N);
                ate.push_back(pool_attrs[std::size_t(s)]);
            }
        }
        LeakageConfig lc = cfg.leakage;
        lc.seed = sub_seed(cfg.seed, "leak-net");
        r.leakage = model_leakage(ltr, atr, lte, ate, N, lc);
    }

    double bp = 0, up = 0, bd = 0, ud = 0;
    int nb = 0, nu_ = 0;
    for (const auto &cm : r.per_class) {
        r.mean_discrepancy += cm.discrepancy.value;
        r.mean_abs_projection += std::abs(cm.projection);
        r.mean_abs_sensitivity += std::abs(cm.sensitivity.mean);
        if (cm.biased) {
            bp += std::abs(cm.projection);
            bd += cm.discrepancy.value;
            ++nb;
        } else {
            up += std::abs(cm.projection);
            ud += cm.discrepancy.value;
            ++nu_;
        }
    }
    r.mean_discrepancy /= N;
    r.mean_abs_projection /= N;
    r.mean_abs_sensitivity /= N;
    r.biased_mean_abs_projection = nb ? bp / nb : 0.0;
    r.unbiased_mean_abs_projection = nu_ ? up / nu_ : 0.0;
    r.biased_mean_discrepancy = nb ? bd / nb : 0.0;
    r.unbiased_mean_discrepancy = nu_ ? ud / nu_ : 0.0;
    return r;
}

std::string report_to_json(const MetricsReport &r) {
    json per = json::array();
    for (const auto &cm : r.per_class)
        per.push_back(
            {{"class", cm.cls},
             {"biased", cm.biased},
             {"discrepancy",
              {{"value", cm.discrepancy.value},
               {"tpr_a0", cm.discrepancy.tpr_a0},
               {"tpr_a1", cm.discrepancy.tpr_a1},
               {"has_a0", cm.discrepancy.has_a0},
               {"has_a1", cm.discrepancy.has_a1},
               {"degenerate", cm.discrepancy.degenerate}}},
             {"projection", cm.projection},
             {"projection_degenerate", cm.projection_degenerate},
             {"sensitivity",
              {{"mean", cm.sensitivity.mean},
               {"stddev", cm.sensitivity.stddev},
               {"samples", cm.sensitivity.samples},
               {"degenerate", cm.sensitivity.degenerate}}}});
    json j{{"test_accuracy", r.test_accuracy},
           {"leakage", r.leakage},
           {"leakage_degenerate", r.leakage_degenerate},
           {"per_class", per},
           {"mean_discrepancy", r.mean_discrepancy},
           {"mean_abs_projection", r.mean_abs_projection},
           {"mean_abs_sensitivity", r.mean_abs_sensitivity},
           {"biased_mean_abs_projection", r.biased_mean_abs_projection},
           {"unbiased_mean_abs_projection", r.unbiased_mean_abs_projection},
           {"biased_mean_discrepancy", r.biased_mean_discrepancy},
           {"unbiased_mean_discrepancy", r.unbiased_mean_discrepancy},
           {"sensitivity_samples_per_class", r.sensitivity_samples_per_class}};
    return j.dump(2);
}

MetricsReport report_from_json(const std::string &text) {
    const json j = json::parse(text);
    MetricsReport r;
    r.test_accuracy = j.at("test_accuracy");
    r.leakage = j.at("leakage");
    r.leakage_degenerate = j.at("leakage_degenerate");
    r.mean_discrepancy = j.at("mean_discrepancy");
    r.mean_abs_projection = j.at("mean_abs_projection");
    r.mean_abs_sensitivity = j.at("mean_abs_sensitivity");
    r.biased_mean_abs_projection = j.at("biased_mean_abs_projection");
    r.unbiased_mean_abs_projection = j.at("unbiased_mean_abs_projection");
    r.biased_mean_discrepancy = j.at("biased_mean_discrepancy");
    r.unbiased_mean_discrepancy = j.at("unbiased_mean_discrepancy");
    r.sensitivity_samples_per_class = j.at("sensitivity_samples_per_class");
    for (const auto &e : j.at("per_class")) {
        ClassMetrics cm;
        cm.cls = e.at("class");
        cm.biased = e.at("biased");
        const auto &d = e.at("discrepancy");
        cm.discrepancy.value = d.at("value");
        cm.discrepancy.tpr_a0 = d.at("tpr_a0");
        cm.discrepancy.tpr_a1 = d.at("tpr_a1");
        cm.discrepancy.has_a0 = d.at("has_a0");
        cm.discrepancy.has_a1 = d.at("has_a1");
        cm.discrepancy.degenerate = d.at("degenerate");
        cm.projection = e.at("projection");
        cm.projection_degenerate = e.at("projection_degenerate");
        const auto &s = e.at("sensitivity");
        cm.sensitivity.mean = s.at("mean");
        cm.sensitivity.stddev = s.at("stddev");
        cm.sensitivity.samples = s.at("samples");
        cm.sensitivity.degenerate = s.at("degenerate");
        r.per_class.push_back(cm);
    }
    return r;
}

} // namespace ortho
