#include "fsm/estimator.hpp"

#include <cmath>
#include <cstring>
#include <json.hpp>

#include "bytes.hpp"
#include "fsm/error.hpp"

namespace fsm {

using nlohmann::json;

double relu_gauss_mean(double beta, double gamma) {
    if (!(gamma > 0.0))
        throw DomainError("spread must be positive, got " + std::to_string(gamma));
    const double z = beta / gamma;
    const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
    const double m = beta * cdf + gamma * pdf;
    return m > 0.0 ? m : 0.0;
}

double post_relu_channel_mean(const Layer& bn, int64_t channel) {
    const size_t c = static_cast<size_t>(channel);
    const double beta = bn.beta.data[c];
    const double gamma = std::fabs(static_cast<double>(bn.gamma.data[c]));
    if (gamma < 1e-12) return beta > 0.0 ? beta : 0.0;
    return relu_gauss_mean(beta, gamma);
}

namespace {

void check_mask(const std::vector<uint8_t>& mask, int channels) {
    if (static_cast<int>(mask.size()) != channels)
        throw DomainError("mask has " + std::to_string(mask.size()) + " entries for " +
                          std::to_string(channels) + " channels");
    int kept = 0;
    for (uint8_t m : mask) kept += m ? 1 : 0;
    if (kept == 0) throw DomainError("mask keeps no channels");
}

const Tensor* consumer_bias(const ModelGraph& g, const Unit& u) {
    const Layer& c = g.layers[static_cast<size_t>(u.consumer)];
    return c.bias ? &*c.bias : nullptr;
}

}  // namespace

ChannelEstimate estimate_layer_means(const ModelGraph& g, const GraphInfo& info, int unit,
                                     const std::vector<uint8_t>& keep_mask) {
    const Unit& u = info.unit(unit);
    check_mask(keep_mask, u.channels);

    Mat w = downstream_weights(g, info, unit);  // throws when no consumer
    const Layer& bn = g.layers[static_cast<size_t>(u.bn)];

    ChannelEstimate est;
    est.unit = unit;
    est.post_relu_mean.resize(static_cast<size_t>(u.channels));
    for (int64_t k = 0; k < u.channels; ++k)
        est.post_relu_mean[static_cast<size_t>(k)] = post_relu_channel_mean(bn, k);

    const Tensor* bias = consumer_bias(g, u);
    est.next_input_mean.assign(static_cast<size_t>(w.rows), 0.0);
    for (int64_t j = 0; j < w.rows; ++j) {
        double acc = 0.0;
        for (int64_t k = 0; k < u.channels; ++k)
            if (keep_mask[static_cast<size_t>(k)])
                acc += est.post_relu_mean[static_cast<size_t>(k)] * w.at(j, k);
        if (bias) acc += static_cast<double>(bias->data[static_cast<size_t>(j)]);
        est.next_input_mean[static_cast<size_t>(j)] = acc;
    }
    return est;
}

ChannelEstimate estimate_layer_means(const ModelGraph& g, int unit,
                                     const std::vector<uint8_t>& keep_mask) {
    GraphInfo info = validate(g);
    return estimate_layer_means(g, info, unit, keep_mask);
}

const LambdaTable::Entry& LambdaTable::at(int unit) const {
    auto it = by_unit.find(unit);
    if (it == by_unit.end())
        throw CalibrationError("no correction entry for unit " + std::to_string(unit));
    return it->second;
}

LambdaTable calibrate_lambda(const ModelGraph& g, const EmpiricalStats& stats) {
    GraphInfo info = validate(g);
    LambdaTable lt;
    for (size_t ui = 0; ui < info.units.size(); ++ui) {
        const Unit& u = info.units[ui];
        if (u.consumer < 0) continue;
        if (!stats.has(u.consumer))
            throw CalibrationError("statistics missing for layer " + std::to_string(u.consumer) +
                                   " (consumer of unit " + std::to_string(ui) + ")");
        const std::vector<double>& emp = stats.at(u.consumer).mean;
        std::vector<uint8_t> full(static_cast<size_t>(u.channels), 1);
        ChannelEstimate est = estimate_layer_means(g, info, static_cast<int>(ui), full);
        if (emp.size() != est.next_input_mean.size())
            throw CalibrationError("layer " + std::to_string(u.consumer) + " statistics cover " +
                                   std::to_string(emp.size()) + " channels, expected " +
                                   std::to_string(est.next_input_mean.size()));
        LambdaTable::Entry e;
        e.lambda.assign(emp.size(), 1.0);
        e.corrected.assign(emp.size(), 0);
        for (size_t j = 0; j < emp.size(); ++j) {
            if (std::fabs(emp[j]) < 1e-6) continue;  // no-correction sentinel
            const double ratio = est.next_input_mean[j] / emp[j];
            // the ratio only models a stable multiplicative bias; far from 1
            // (sign flips included) the analytic value is a cancellation
            // artifact and dividing by it amplifies masked estimates without
            // bound, so such channels stay uncorrected
            if (!(ratio > 0.1 && ratio < 10.0)) continue;
            e.lambda[j] = ratio;
            e.corrected[j] = 1;
        }
        lt.by_unit[static_cast<int>(ui)] = std::move(e);
    }
    return lt;
}

ShiftEstimate shift_of_plan(const ModelGraph& g, int unit, const std::vector<uint8_t>& keep_mask,
                            const LambdaTable& lt) {
    GraphInfo info = validate(g);
    const Unit& u = info.unit(unit);
    const LambdaTable::Entry& le = lt.at(unit);

    std::vector<uint8_t> full(static_cast<size_t>(u.channels), 1);
    ChannelEstimate ef = estimate_layer_means(g, info, unit, full);
    ChannelEstimate em = estimate_layer_means(g, info, unit, keep_mask);
    if (le.lambda.size() != ef.next_input_mean.size())
        throw CalibrationError("correction table size mismatch for unit " + std::to_string(unit));

    ShiftEstimate se;
    se.unit = unit;
    se.delta_e.resize(ef.next_input_mean.size());
    for (size_t j = 0; j < se.delta_e.size(); ++j) {
        double raw = ef.next_input_mean[j] - em.next_input_mean[j];
        se.delta_e[j] = le.corrected[j] ? raw / le.lambda[j] : raw;
        se.sum_abs += std::fabs(se.delta_e[j]);
    }
    int kept = 0;
    for (uint8_t m : keep_mask) kept += m ? 1 : 0;
    se.std_factor = std::sqrt(static_cast<double>(kept) / static_cast<double>(u.channels));
    return se;
}

void save_lambda(const LambdaTable& lt, const std::string& stem) {
    std::vector<double> blob;
    json units = json::array();
    for (const auto& [unit, e] : lt.by_unit) {
        json je;
        je["unit"] = unit;
        je["channels"] = e.lambda.size();
        je["lambda_offset"] = blob.size() * 8;
        blob.insert(blob.end(), e.lambda.begin(), e.lambda.end());
        je["corrected_offset"] = blob.size() * 8;
        for (uint8_t c : e.corrected) blob.push_back(c ? 1.0 : 0.0);
        units.push_back(std::move(je));
    }
    json m;
    m["format"] = "fsm-lambda-v1";
    m["dtype"] = "f64";
    m["units"] = std::move(units);
    m["blob_bytes"] = blob.size() * 8;
    m["blob_crc32"] = detail::crc32_of(reinterpret_cast<const unsigned char*>(blob.data()),
                                       blob.size() * 8);
    std::string text = m.dump(2);
    text.push_back('\n');
    detail::write_file_bytes(stem + ".manifest", text.data(), text.size());
    detail::write_file_bytes(stem + ".blob", blob.data(), blob.size() * 8);
}

LambdaTable load_lambda(const std::string& stem) {
    auto mbytes = detail::read_file_bytes(stem + ".manifest");
    json m;
    try {
        m = json::parse(mbytes.begin(), mbytes.end());
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + stem + ".manifest: " + e.what());
    }
    auto blob = detail::read_file_bytes(stem + ".blob");

    LambdaTable lt;
    try {
        if (m.at("format").get<std::string>() != "fsm-lambda-v1")
            throw IoError("unknown correction table format in " + stem + ".manifest");
        if (m.at("dtype").get<std::string>() != "f64")
            throw IoError("unsupported dtype in " + stem + ".manifest");
        const uint32_t want = m.at("blob_crc32").get<uint32_t>();
        const uint32_t got = detail::crc32_of(blob.data(), blob.size());
        if (want != got)
            throw IoError(stem + ".blob: checksum mismatch (manifest " + std::to_string(want) +
                          ", blob " + std::to_string(got) + ")");
        for (const json& je : m.at("units")) {
            const int unit = je.at("unit").get<int>();
            const size_t n = je.at("channels").get<size_t>();
            const uint64_t lo = je.at("lambda_offset").get<uint64_t>();
            const uint64_t co = je.at("corrected_offset").get<uint64_t>();
            if (lo + n * 8 > blob.size() || co + n * 8 > blob.size())
                throw IoError(stem + ".blob: offset overrun for unit " + std::to_string(unit));
            LambdaTable::Entry e;
            e.lambda.resize(n);
            e.corrected.resize(n);
            std::memcpy(e.lambda.data(), blob.data() + lo, n * 8);
            std::vector<double> flags(n);
            std::memcpy(flags.data(), blob.data() + co, n * 8);
            for (size_t i = 0; i < n; ++i) e.corrected[i] = flags[i] != 0.0 ? 1 : 0;
            lt.by_unit[unit] = std::move(e);
        }
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + stem + ".manifest: " + e.what());
    }
    return lt;
}

}  // namespace fsm
