/** Typed client for the episode server. All calls go through one fetch
 * implementation so tests can substitute a scripted server. */

export interface PoseDict {
  position: [number, number, number];
  yaw_deg: number;
  pitch_deg: number;
}

export interface ObservationPayload {
  session_id: string;
  step_index: number;
  image: string;
  pose: PoseDict;
  feasible_actions: string[];
  status: "Active" | "Terminated";
  termination?: string | null;
}

export interface CreateResponse {
  session_id: string;
  target: { image: string; text: string };
  observation: ObservationPayload;
}

export interface ResultPayload {
  termination: string;
  steps: number;
  path_length: number;
  final_pose: PoseDict;
  found_target: boolean;
  distance_to_target: number;
  success: number;
}

export interface GridDump {
  format_version: number;
  kind: "semantic" | "cognitive" | "uncertainty";
  spec: {
    bounds_min: [number, number, number];
    bounds_max: [number, number, number];
    cell: [number, number, number];
    dims: [number, number, number];
  };
  values?: number[];
  labels?: string[];
  rle?: [number, number][];
}

export interface TaskInfo {
  task_id: string;
  difficulty: string;
  text: string;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(message: string, readonly status: number, readonly body: unknown) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(`${this.base}${path}`, init);
    const body = await resp.json().catch(() => null);
    if (!resp.ok) {
      throw new ApiError(`${path} failed (${resp.status})`, resp.status, body);
    }
    return body as T;
  }

  listTasks(): Promise<TaskInfo[]> {
    return this.request("/tasks");
  }

  createEpisode(taskId: string): Promise<CreateResponse> {
    return this.request("/episodes", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ task_id: taskId, agent: "human" }),
    });
  }

  observe(sessionId: string): Promise<ObservationPayload> {
    return this.request(`/episodes/${sessionId}/observation`);
  }

  act(sessionId: string, action: string): Promise<ObservationPayload> {
    return this.request(`/episodes/${sessionId}/action`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ action }),
    });
  }

  maps(sessionId: string, layer: string): Promise<GridDump> {
    return this.request(`/episodes/${sessionId}/maps?layer=${layer}`);
  }

  result(sessionId: string): Promise<ResultPayload> {
    return this.request(`/episodes/${sessionId}/result`);
  }

  imageUrl(path: string): string {
    return `${this.base}${path}`;
  }
}
