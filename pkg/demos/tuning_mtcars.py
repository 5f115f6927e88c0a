"""An MLP pipeline on mtcars, tuned by random search.

Each block repeats linear -> (relu | sigmoid) -> dropout. The block count,
width, activation, dropout rate, learning rate and, internally via early
stopping, the number of epochs are searched jointly.
"""

import gradpipe as gp
from gradpipe.pipeline import branch

task = gp.mtcars()
print(task)

segment = (gp.nn_op("linear", out_features=gp.to_tune(20, 500))
           >> branch({"relu": gp.nn_op("relu"), "sigmoid": gp.nn_op("sigmoid")},
                     selection=gp.to_tune(["relu", "sigmoid"]))
           >> gp.nn_op("dropout", p=gp.to_tune(0.1, 0.9)))

graph = (gp.po("torch_ingress_num")
         >> gp.nn_op("block", segment, n_blocks=gp.to_tune(1, 5))
         >> gp.nn_op("head")
         >> gp.po("torch_loss", gp.t_loss("mse"))
         >> gp.po("torch_optimizer", gp.t_opt("adamw", lr=gp.to_tune(1e-4, 1e-1, logscale=True)))
         >> gp.po("torch_model_regr", epochs=gp.to_tune(upper=100, internal=True), batch_size=32,
                  patience=5, measures_valid=["regr.mse"]))

learner = gp.as_learner(graph, "custom_nn")
gp.set_validate(learner, "test")
print(sorted(learner.param_set.search_space()))

result = gp.tune_random_search(learner, task, gp.rsmp("holdout"),
                               gp.msr("internal_valid_score", minimize=True), term_evals=30, seed=42)
print(f"best internal validation mse: {result.best_score:.3f}")
print(result.summary())

# refit on everything with the winning values
final = gp.as_learner(graph, "custom_nn")
final.param_set.set_values(result.result_learner_param_vals)
final.train(task)
pred = final.predict(task)
print("in-sample rmse:", gp.msr("regr.rmse").score(pred))
