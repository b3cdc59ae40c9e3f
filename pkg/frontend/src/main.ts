/** DOM wiring: one button press = one action request; view, pose, and
 * overlays refresh from each response.  Reloading resumes from server
 * state since everything is re-fetched from the session id in the URL. */

import { ApiClient, ApiError, type ObservationPayload } from "./api.js";
import { overlayPixels } from "./overlay.js";
import { SessionState } from "./state.js";

const ACTIONS = [
  "MoveForward", "MoveBackward", "MoveLeft", "MoveRight",
  "Ascend", "Descend", "TurnLeft45", "TurnRight45", "Stop",
];

const KEY_BINDINGS: Record<string, string> = {
  w: "MoveForward", s: "MoveBackward", a: "MoveLeft", d: "MoveRight",
  r: "Ascend", f: "Descend", q: "TurnLeft45", e: "TurnRight45", " ": "Stop",
};

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

class App {
  private client = new ApiClient("");
  private state: SessionState | null = null;
  private sessionId = "";

  async start(): Promise<void> {
    const params = new URLSearchParams(window.location.search);
    const existing = params.get("session");
    const tasks = await this.client.listTasks();
    const picker = $<HTMLSelectElement>("task-picker");
    for (const task of tasks) {
      const option = document.createElement("option");
      option.value = task.task_id;
      option.textContent = `[${task.difficulty}] ${task.text}`;
      picker.appendChild(option);
    }
    $<HTMLButtonElement>("start-button").onclick = () => this.createSession(picker.value);
    this.buildActionButtons();
    this.bindKeyboard();
    $<HTMLSelectElement>("overlay-picker").onchange = () => void this.refreshOverlay();
    if (existing) {
      this.sessionId = existing;
      const obs = await this.client.observe(existing);
      this.state = new SessionState(obs);
      this.render(obs);
    }
  }

  private async createSession(taskId: string): Promise<void> {
    const created = await this.client.createEpisode(taskId);
    this.sessionId = created.session_id;
    const url = new URL(window.location.href);
    url.searchParams.set("session", this.sessionId);
    window.history.replaceState(null, "", url);
    this.state = new SessionState(created.observation);
    $<HTMLImageElement>("target-image").src = this.client.imageUrl(created.target.image);
    $<HTMLSpanElement>("target-text").textContent = created.target.text;
    this.render(created.observation);
  }

  private buildActionButtons(): void {
    const bar = $<HTMLDivElement>("actions");
    for (const action of ACTIONS) {
      const button = document.createElement("button");
      button.id = `action-${action}`;
      button.textContent = action;
      button.onclick = () => void this.act(action);
      bar.appendChild(button);
    }
  }

  private bindKeyboard(): void {
    window.addEventListener("keydown", (event) => {
      const action = KEY_BINDINGS[event.key.toLowerCase()];
      if (action) {
        event.preventDefault();
        void this.act(action);
      }
    });
  }

  private async act(action: string): Promise<void> {
    if (!this.state || !this.sessionId || !this.state.canAct(action)) {
      return;
    }
    this.state.beginAction(action);
    this.syncButtons();
    try {
      const obs = await this.client.act(this.sessionId, action);
      this.state.completeAction(obs);
      this.render(obs);
      if (this.state.terminated) {
        await this.showResult();
      }
    } catch (err) {
      this.state.failAction();
      this.syncButtons();
      if (err instanceof ApiError && err.status === 409) {
        const body = err.body as { feasible_actions?: string[] } | null;
        if (body?.feasible_actions) {
          this.state.feasible = body.feasible_actions;
        }
        this.setBanner("action rejected by the server");
      } else {
        this.setBanner("network error; click to retry");
      }
    }
  }

  private async showResult(): Promise<void> {
    const result = await this.client.result(this.sessionId);
    const verdict = result.success ? "SUCCESS" : "failure";
    this.setBanner(
      `${verdict}: ${result.termination} after ${result.steps} steps, ` +
      `${result.distance_to_target.toFixed(1)} m from the target`,
    );
  }

  private setBanner(text: string): void {
    $<HTMLDivElement>("banner").textContent = text;
  }

  private render(obs: ObservationPayload): void {
    $<HTMLImageElement>("view").src = this.client.imageUrl(obs.image);
    $<HTMLSpanElement>("pose").textContent =
      `pos (${obs.pose.position.map((v) => v.toFixed(1)).join(", ")})  ` +
      `yaw ${obs.pose.yaw_deg.toFixed(0)}  step ${obs.step_index}`;
    this.setBanner(this.state?.terminated ? "episode terminated" : "");
    this.syncButtons();
    void this.refreshOverlay();
  }

  private syncButtons(): void {
    for (const action of ACTIONS) {
      $<HTMLButtonElement>(`action-${action}`).disabled = !this.state?.canAct(action);
    }
  }

  private async refreshOverlay(): Promise<void> {
    const layer = $<HTMLSelectElement>("overlay-picker").value;
    const canvas = $<HTMLCanvasElement>("overlay");
    if (!this.sessionId || layer === "none") {
      canvas.hidden = true;
      return;
    }
    try {
      const dump = await this.client.maps(this.sessionId, layer);
      const image = overlayPixels(dump);
      canvas.hidden = false;
      canvas.width = image.width;
      canvas.height = image.height;
      const ctx = canvas.getContext("2d");
      if (ctx) {
        const pixels = new Uint8ClampedArray(image.data.length);
        pixels.set(image.data);
        ctx.putImageData(new ImageData(pixels, image.width, image.height), 0, 0);
      }
    } catch {
      canvas.hidden = true; // layer unavailable: hide the toggle target
    }
  }
}

window.addEventListener("DOMContentLoaded", () => {
  void new App().start();
});
