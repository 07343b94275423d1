// tinyseg command-line interface: synthetic data generation, training,
// prediction, evaluation and gradient checking.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tinyseg/tinyseg.hpp"

namespace {

using namespace tinyseg;

/// Command-line misuse detected after parsing (unknown op names etc.);
/// mapped to exit code 1 like parser errors.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const std::vector<std::string>& arch_choices() {
    static const std::vector<std::string> kChoices{"unet", "resunet", "segnet",
                                                   "fcn8", "fcn16", "fcn32"};
    return kChoices;
}

/// Expands `--config FILE` into `--key=value` arguments inserted right
/// after the subcommand name. Command-line flags appear later and win on
/// conflict (every option uses a take-last policy). Unknown keys surface
/// as ordinary parse errors.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::size_t subcommand = args.size();
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (!args[i].empty() && args[i][0] != '-') {
            subcommand = i;
            break;
        }
    }
    if (subcommand == args.size()) {
        return args;
    }
    std::string config_path;
    std::vector<std::string> rest;
    for (std::size_t i = subcommand + 1; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) {
                throw UsageError("--config requires a file argument");
            }
            config_path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    std::vector<std::string> out(args.begin(), args.begin() + subcommand + 1);
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) {
            throw UsageError("cannot open config file " + config_path);
        }
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') {
                continue;
            }
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos || eq == 0) {
                throw UsageError(config_path + ":" + std::to_string(line_no) +
                                 ": expected key=value");
            }
            out.push_back("--" + line);
        }
    }
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

ArchitectureSpec spec_for_arch(const std::string& arch, int depth, int base_filters, int size) {
    ArchitectureSpec spec;
    if (arch == "unet") {
        spec = default_spec(Family::kUnet);
    } else if (arch == "resunet") {
        spec = default_spec(Family::kResunet);
    } else if (arch == "segnet") {
        spec = default_spec(Family::kSegnet);
    } else if (arch == "fcn8" || arch == "fcn16" || arch == "fcn32") {
        spec = default_spec(Family::kFcn);
        spec.stride = std::stoi(arch.substr(3));
    } else {
        throw UsageError("unknown architecture '" + arch + "'");
    }
    if (depth > 0) {
        spec.depth = depth;
    }
    spec.base_filters = base_filters;
    spec.input_size = size;
    validate_spec(spec);
    return spec;
}

/// Runs the model on one image. Images whose size differs from the
/// model's input size are resized for inference and the predicted labels
/// are mapped back to the original resolution.
LabelMap predict_labels(Model& model, const Tensor& image) {
    const Shape s = image.shape();
    const std::int64_t size = model.spec.input_size;
    if (s.h == size && s.w == size) {
        return argmax_channels(model.forward(image));
    }
    const Tensor resized = resize_bilinear(image, size, size);
    const LabelMap labels = argmax_channels(model.forward(resized));
    return resize_nearest(labels, s.h, s.w);
}

std::vector<Sample> load_split(const std::filesystem::path& manifest_path,
                               const std::string& split) {
    std::vector<Sample> samples;
    for (const ManifestEntry& entry : load_manifest(manifest_path)) {
        if (entry.split == split) {
            samples.push_back(load_sample(entry.image, entry.mask));
        }
    }
    if (samples.empty()) {
        throw std::runtime_error("manifest " + manifest_path.string() +
                                 " has no samples in split '" + split + "'");
    }
    return samples;
}

struct SynthArgs {
    int count = 8;
    int size = 64;
    std::uint64_t seed = 0;
    std::string out;
    std::string split = "train";
};

int run_synth(const SynthArgs& args) {
    std::cerr << "[synth] count=" << args.count << " size=" << args.size
              << " seed=" << args.seed << " split=" << args.split << " out=" << args.out << '\n';
    const auto manifest = generate_synthetic(args.count, args.size, args.seed, args.out,
                                             args.split);
    std::cerr << "[synth] wrote " << args.count << " samples, manifest " << manifest.string()
              << '\n';
    return 0;
}

struct TrainArgs {
    std::string arch = "unet";
    std::string manifest;
    int epochs = 1;
    double lr = 1e-3;
    int batch = 2;
    int size = 256;
    int depth = 0;
    int base_filters = 64;
    std::uint64_t seed = 0;
    std::string optimizer = "adam";
    double momentum = 0.9;
    std::string out;
    std::string loss_csv;
    int log_interval = 10;
};

int run_train(const TrainArgs& args) {
    TrainConfig config;
    config.arch = spec_for_arch(args.arch, args.depth, args.base_filters, args.size);
    config.epochs = args.epochs;
    config.batch_size = args.batch;
    config.seed = args.seed;
    config.optimizer.kind = optimizer_from_name(args.optimizer);
    config.optimizer.lr = args.lr;
    config.optimizer.momentum = args.momentum;
    config.checkpoint_path = args.out;
    config.loss_log_path = args.loss_csv.empty() ? args.out + ".loss.csv" : args.loss_csv;
    config.log_interval = args.log_interval;

    std::cerr << "[train] arch=" << args.arch << " depth=" << config.arch.depth
              << " base_filters=" << config.arch.base_filters << " size=" << config.arch.input_size
              << " epochs=" << config.epochs << " batch=" << config.batch_size
              << " lr=" << config.optimizer.lr << " optimizer=" << args.optimizer
              << " seed=" << config.seed << " manifest=" << args.manifest << " out=" << args.out
              << '\n';

    const std::vector<Sample> dataset = load_split(args.manifest, "train");
    const TrainResult result = train(config, dataset, &std::cerr);
    std::cerr << "[train] finished: " << result.history.size() << " steps, final loss "
              << result.history.back().loss << ", checkpoint " << args.out << '\n';
    return 0;
}

struct PredictArgs {
    std::string model;
    std::string image;
    std::string mask_out;
    bool palette = false;
};

int run_predict(const PredictArgs& args) {
    std::cerr << "[predict] model=" << args.model << " image=" << args.image
              << " mask-out=" << args.mask_out << " palette=" << (args.palette ? "yes" : "no")
              << '\n';
    Model model = load_checkpoint(args.model);
    const Tensor image = read_ppm(args.image);
    const LabelMap labels = predict_labels(model, image);
    save_mask(labels, args.mask_out, args.palette ? MaskFormat::kPalette : MaskFormat::kRaw);
    std::cerr << "[predict] wrote " << args.mask_out << '\n';
    return 0;
}

struct EvalArgs {
    std::string model;
    std::string manifest;
    std::string split = "test";
    std::string metrics_out;
    bool kappa_exclude_bg = false;
};

int run_eval(const EvalArgs& args) {
    std::cerr << "[eval] model=" << args.model << " manifest=" << args.manifest
              << " split=" << args.split << " metrics-out=" << args.metrics_out
              << " kappa-exclude-bg=" << (args.kappa_exclude_bg ? "yes" : "no") << '\n';
    Model model = load_checkpoint(args.model);
    ConfusionMatrix cm(model.spec.num_classes);
    int evaluated = 0;
    for (const ManifestEntry& entry : load_manifest(args.manifest)) {
        if (entry.split != args.split) {
            continue;
        }
        const Sample sample = load_sample(entry.image, entry.mask);
        const LabelMap pred = predict_labels(model, sample.image);
        cm += confusion(pred, sample.mask, model.spec.num_classes);
        ++evaluated;
    }
    if (evaluated == 0) {
        throw std::runtime_error("manifest " + args.manifest + " has no samples in split '" +
                                 args.split + "'");
    }
    const MetricsReport report = per_class_report(cm, !args.kappa_exclude_bg);
    std::ofstream out(args.metrics_out);
    if (!out) {
        throw std::runtime_error(args.metrics_out + ": cannot open for writing");
    }
    write_metrics_csv(out, report, class_names_for(model.spec.num_classes));
    std::cerr << "[eval] " << evaluated << " samples, accuracy " << report.accuracy
              << ", quadratic kappa "
              << (report.kappa ? std::to_string(*report.kappa) : std::string("n/a")) << '\n';
    return 0;
}

struct GradcheckArgs {
    std::string op;
    std::string arch;
    std::uint64_t seed = 2024;
};

int run_gradcheck(const GradcheckArgs& args) {
    std::cerr << "[gradcheck] op=" << (args.op.empty() ? "<all>" : args.op)
              << " arch=" << (args.arch.empty() ? "<all>" : args.arch) << " seed=" << args.seed
              << '\n';
    std::vector<GradCheckCase> results;
    if (!args.op.empty()) {
        bool matched = false;
        for (const std::string& name : gradcheck_op_names()) {
            if (name == args.op || name.rfind(args.op + "_", 0) == 0) {
                results.push_back(run_gradcheck_op(name, args.seed));
                matched = true;
            }
        }
        if (!matched) {
            std::string known;
            for (const std::string& name : gradcheck_op_names()) {
                known += (known.empty() ? "" : ", ") + name;
            }
            throw UsageError("unknown op '" + args.op + "'; known ops: " + known);
        }
    } else if (!args.arch.empty()) {
        const auto names = gradcheck_arch_names();
        if (std::find(names.begin(), names.end(), args.arch) == names.end()) {
            throw UsageError("unknown arch '" + args.arch +
                             "'; known: unet, resunet, segnet, fcn");
        }
        results.push_back(run_gradcheck_arch(args.arch, args.seed));
    } else {
        for (const std::string& name : gradcheck_op_names()) {
            results.push_back(run_gradcheck_op(name, args.seed));
        }
        for (const std::string& name : gradcheck_arch_names()) {
            results.push_back(run_gradcheck_arch(name, args.seed));
        }
    }
    std::printf("%-26s %14s %11s %s\n", "case", "max_rel_error", "threshold", "status");
    bool all_passed = true;
    for (const GradCheckCase& r : results) {
        std::printf("%-26s %14.3e %11.0e %s\n", r.name.c_str(), r.error, r.threshold,
                    r.passed ? "PASS" : "FAIL");
        all_passed = all_passed && r.passed;
    }
    if (!all_passed) {
        throw std::runtime_error("gradient checks failed");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tinyseg: a desk-scale semantic segmentation engine"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic 5-class dataset");
    synth->add_option("--count", synth_args.count, "Number of samples")->capture_default_str();
    synth->add_option("--size", synth_args.size, "Square image size")->capture_default_str();
    synth->add_option("--seed", synth_args.seed, "Random seed")->capture_default_str();
    synth->add_option("--out", synth_args.out, "Output directory")->required();
    synth->add_option("--split", synth_args.split, "Split recorded in the manifest")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a manifest");
    train_cmd->add_option("--arch", train_args.arch, "Architecture")
        ->check(CLI::IsMember(arch_choices()))
        ->capture_default_str();
    train_cmd->add_option("--manifest", train_args.manifest, "Dataset manifest")->required();
    train_cmd->add_option("--epochs", train_args.epochs, "Training epochs")
        ->capture_default_str();
    train_cmd->add_option("--lr", train_args.lr, "Learning rate")->capture_default_str();
    train_cmd->add_option("--batch", train_args.batch, "Batch size")->capture_default_str();
    train_cmd->add_option("--size", train_args.size, "Model input size")->capture_default_str();
    train_cmd->add_option("--depth", train_args.depth, "Encoder depth (0 = family default)")
        ->capture_default_str();
    train_cmd->add_option("--base-filters", train_args.base_filters, "First-level filters")
        ->capture_default_str();
    train_cmd->add_option("--seed", train_args.seed, "Random seed")->capture_default_str();
    train_cmd->add_option("--optimizer", train_args.optimizer, "Optimizer")
        ->check(CLI::IsMember({"adam", "sgd"}))
        ->capture_default_str();
    train_cmd->add_option("--momentum", train_args.momentum, "SGD momentum")
        ->capture_default_str();
    train_cmd->add_option("--out", train_args.out, "Checkpoint output path")->required();
    train_cmd->add_option("--loss-csv", train_args.loss_csv,
                          "Loss log path (default <out>.loss.csv)");
    train_cmd->add_option("--log-interval", train_args.log_interval, "Progress line interval")
        ->capture_default_str();

    PredictArgs predict_args;
    CLI::App* predict = app.add_subcommand("predict", "Predict a mask for one image");
    predict->add_option("--model", predict_args.model, "Checkpoint path")->required();
    predict->add_option("--image", predict_args.image, "Input PPM image")->required();
    predict->add_option("--mask-out", predict_args.mask_out, "Output mask path")->required();
    predict->add_flag("--palette", predict_args.palette, "Write a colorized P6 mask");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a manifest split");
    eval_cmd->add_option("--model", eval_args.model, "Checkpoint path")->required();
    eval_cmd->add_option("--manifest", eval_args.manifest, "Dataset manifest")->required();
    eval_cmd->add_option("--split", eval_args.split, "Manifest split to evaluate")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
    eval_cmd->add_option("--metrics-out", eval_args.metrics_out, "Metrics CSV path")->required();
    eval_cmd->add_flag("--kappa-exclude-bg", eval_args.kappa_exclude_bg,
                       "Rate kappa over the four tissue classes only");

    GradcheckArgs gradcheck_args;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    CLI::Option* op_opt = gradcheck->add_option("--op", gradcheck_args.op, "Check one operation");
    gradcheck->add_option("--arch", gradcheck_args.arch, "Check one architecture family")
        ->excludes(op_opt);
    gradcheck->add_option("--seed", gradcheck_args.seed, "Random seed")->capture_default_str();

    // Every subcommand accepts `--config FILE` with the same keys as its
    // long options; command-line flags win on conflict.
    for (CLI::App* sub : {synth, train_cmd, predict, eval_cmd, gradcheck}) {
        sub->footer("Options may also come from --config FILE (key=value lines; flags win).");
        for (CLI::Option* opt : sub->get_options()) {
            opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        }
    }

    std::vector<std::string> args;
    try {
        args = expand_config(std::vector<std::string>(argv + 1, argv + argc));
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    std::reverse(args.begin(), args.end());

    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }

    try {
        if (app.got_subcommand(synth)) {
            return run_synth(synth_args);
        }
        if (app.got_subcommand(train_cmd)) {
            return run_train(train_args);
        }
        if (app.got_subcommand(predict)) {
            return run_predict(predict_args);
        }
        if (app.got_subcommand(eval_cmd)) {
            return run_eval(eval_args);
        }
        if (app.got_subcommand(gradcheck)) {
            return run_gradcheck(gradcheck_args);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
