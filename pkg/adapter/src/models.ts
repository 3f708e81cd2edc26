/**
 * Forecast model plug-in surface.
 *
 * A model sees one univariate context at a time (fit) and must emit exactly
 * `horizon` point-forecast values (predict). Models are re-fit per request;
 * the protocol carries no cross-request state.
 *
 * To serve a real model (a pretrained time-series foundation model, a deep
 * baseline, anything callable from Node), implement ForecastModel and add a
 * factory to MODEL_REGISTRY; `--model=<name>` selects it. Heavyweight models
 * typically shell out or call a local inference endpoint inside predict().
 */

export interface ForecastModel {
  readonly modelId: string;
  /** True only for the naive reference, which the harness cross-checks. */
  readonly referenceNaive?: boolean;
  fit(context: number[]): void;
  predict(horizon: number): number[];
}

/** Carries the most recent context value forward: the benchmark's floor. */
export class NaiveConstantModel implements ForecastModel {
  readonly modelId = "naive-constant";
  readonly referenceNaive = true;
  private lastValue = 0;

  fit(context: number[]): void {
    this.lastValue = context[context.length - 1];
  }

  predict(horizon: number): number[] {
    return new Array<number>(horizon).fill(this.lastValue);
  }
}

/**
 * Linear-trend extrapolation over a trailing window; a minimal example of a
 * model with actual state, useful when testing harness-side scoring paths.
 */
export class DriftModel implements ForecastModel {
  readonly modelId = "drift";
  private lastValue = 0;
  private slope = 0;

  constructor(private window = 16) {}

  fit(context: number[]): void {
    this.lastValue = context[context.length - 1];
    const n = Math.min(this.window, context.length - 1);
    this.slope = n > 0 ? (this.lastValue - context[context.length - 1 - n]) / n : 0;
  }

  predict(horizon: number): number[] {
    const out = new Array<number>(horizon);
    for (let h = 0; h < horizon; h++) out[h] = this.lastValue + this.slope * (h + 1);
    return out;
  }
}

export const MODEL_REGISTRY: Record<string, () => ForecastModel> = {
  naive: () => new NaiveConstantModel(),
  drift: () => new DriftModel(),
};

export function createModel(name: string): ForecastModel {
  const factory = MODEL_REGISTRY[name];
  if (!factory) {
    throw new Error(`unknown model '${name}'; available: ${Object.keys(MODEL_REGISTRY).join(", ")}`);
  }
  return factory();
}
