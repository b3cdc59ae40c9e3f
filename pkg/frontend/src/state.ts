/** Client-side session state machine.
 *
 * Exactly one action request may be in flight; buttons stay disabled while
 * waiting and forever after termination, so the number of confirmed clicks
 * always equals the number of actions in the server record. */

import type { ObservationPayload } from "./api.js";

export type Phase = "ready" | "inflight" | "terminated";

export class SessionState {
  phase: Phase = "ready";
  stepIndex = 0;
  feasible: string[] = [];
  termination: string | null = null;
  confirmedClicks = 0;
  imagePath = "";

  constructor(observation: ObservationPayload) {
    this.applyObservation(observation);
  }

  applyObservation(obs: ObservationPayload): void {
    this.stepIndex = obs.step_index;
    this.feasible = [...obs.feasible_actions];
    this.imagePath = obs.image;
    if (obs.status === "Terminated") {
      this.phase = "terminated";
      this.termination = obs.termination ?? "Stopped";
    } else if (this.phase !== "terminated") {
      this.phase = "ready";
    }
  }

  /** Whether the button for this action should be enabled right now. */
  canAct(action: string): boolean {
    if (this.phase !== "ready") {
      return false;
    }
    return action === "Stop" || this.feasible.includes(action);
  }

  /** Reserve the in-flight slot; throws when a request is already out. */
  beginAction(action: string): void {
    if (!this.canAct(action)) {
      throw new Error(`action ${action} not available in phase ${this.phase}`);
    }
    this.phase = "inflight";
  }

  /** Fold in the action response; counts the click as confirmed. */
  completeAction(obs: ObservationPayload): void {
    if (this.phase !== "inflight") {
      throw new Error("no action in flight");
    }
    this.confirmedClicks += 1;
    this.phase = "ready";
    this.applyObservation(obs);
  }

  /** Network failure: free the slot without counting the click, so a retry
   * cannot double-submit. */
  failAction(): void {
    if (this.phase === "inflight") {
      this.phase = "ready";
    }
  }

  get terminated(): boolean {
    return this.phase === "terminated";
  }
}
