/** Adaptive commit pacing: the closed-form gap controller. */

export interface DacParams {
  delta: number; // duty budget
  epsilon: number; // conflict budget
  alpha: number; // EMA coefficient
  rho: number; // jitter magnitude
}

export const DEFAULT_PARAMS: DacParams = {
  delta: 0.5,
  epsilon: 0.05,
  alpha: 0.2,
  rho: 0.1,
};

export function conflictProbability(t: number, tau: number, n: number): number {
  if (n <= 1 || tau === 0) return 0;
  return 1 - Math.exp((-(n - 1) * tau) / (t + tau));
}

export function duty(t: number, tau: number): number {
  return tau === 0 ? 0 : tau / (t + tau);
}

export function tConf(tauHat: number, n: number, epsilon: number): number {
  return Math.max(0, ((n - 1) * tauHat) / -Math.log(1 - epsilon) - tauHat);
}

export function tCost(tauHat: number, delta: number): number {
  return ((1 - delta) / delta) * tauHat;
}

export function tStar(tauHat: number, n: number, params: DacParams): number {
  return Math.max(tConf(tauHat, n, params.epsilon), tCost(tauHat, params.delta));
}

export function jitteredGap(tStarValue: number, rho: number, u: number): number {
  return tStarValue * (1 + rho * u);
}

export function updateTau(tauHat: number, observed: number, alpha: number): number {
  return (1 - alpha) * tauHat + alpha * observed;
}

/** Per-producer controller state; tauHat is unset until the first sample. */
export class DacState {
  tauHat: number | null = null;
  gap = 0;
  nProducers = 1;
  tLast = -Infinity;

  observe(tauObs: number, params: DacParams): void {
    this.tauHat =
      this.tauHat === null ? tauObs : updateTau(this.tauHat, tauObs, params.alpha);
  }

  recomputeGap(params: DacParams, u: number): number {
    this.gap =
      this.tauHat === null
        ? 0
        : jitteredGap(tStar(this.tauHat, this.nProducers, params), params.rho, u);
    return this.gap;
  }
}
