// Thin typed wrapper over the review service HTTP API.

import type { AssignmentsResponse, CardPayload, DecisionBody, StatsResponse } from './types.js';

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function errorFrom(res: Response): Promise<ApiError> {
  let code = 'http_error';
  let message = `HTTP ${res.status}`;
  try {
    const body = await res.json();
    const detail = body?.detail;
    if (typeof detail === 'string') {
      message = detail;
    } else if (detail && typeof detail === 'object') {
      code = detail.error ?? code;
      message = detail.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(res.status, code, message);
}

export class ApiClient {
  constructor(
    private readonly token: string,
    private readonly baseUrl: string = '',
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      headers: { Authorization: `Bearer ${this.token}` },
    });
    if (!res.ok) throw await errorFrom(res);
    return (await res.json()) as T;
  }

  assignments(reviewer: string): Promise<AssignmentsResponse> {
    return this.get<AssignmentsResponse>(
      `/api/assignments?reviewer=${encodeURIComponent(reviewer)}`,
    );
  }

  candidate(qaId: string): Promise<CardPayload> {
    return this.get<CardPayload>(`/api/candidates/${encodeURIComponent(qaId)}`);
  }

  stats(): Promise<StatsResponse> {
    return this.get<StatsResponse>('/api/stats');
  }

  // Raw response: the submit queue classifies statuses itself (409 is an ack).
  postReview(body: DecisionBody): Promise<Response> {
    return this.fetchFn(this.baseUrl + '/api/reviews', {
      method: 'POST',
      headers: {
        Authorization: `Bearer ${this.token}`,
        'Content-Type': 'application/json',
      },
      body: JSON.stringify(body),
    });
  }

  // <img> tags cannot carry an Authorization header; the service accepts
  // the token as a query parameter for exactly this case.
  imageUrl(apiPath: string): string {
    const sep = apiPath.includes('?') ? '&' : '?';
    return `${this.baseUrl}${apiPath}${sep}token=${encodeURIComponent(this.token)}`;
  }
}
